from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from lorentz_union.exact import (Base, ExactArithmeticError, ExactScalar, InvalidBase, UnsupportedEntry,
                                 det, inverse_unimodular, matmul, ratio_is_rational)

SYM = Base.symbolic(3.3)
SQ2 = Base.radical(2, 2)


def mono(c, k, base=SYM, root=2):
    return ExactScalar.monomial(c, k, base, root)


def test_coefficients_lowest_terms_and_zero_dropped():
    x = ExactScalar(((1, Fraction(2, 4)), (3, 0)), SYM, 2)
    assert x.terms == ((1, Fraction(1, 2)),)


def test_radical_folding_makes_equal_values_equal():
    # sqrt2^(2/2) * sqrt2^(2/2) = 2
    x = mono(1, 2, SQ2) * mono(1, 2, SQ2)
    assert x == 2
    assert mono(1, 4, SQ2) == 2


def test_monomial_inverse():
    x = mono(Fraction(3, 2), 5)
    assert x * x.inverse() == 1


def test_inverse_of_sum_rejected():
    with pytest.raises(UnsupportedEntry):
        (mono(1, 1) + mono(1, 0)).inverse()


def test_invalid_base():
    with pytest.raises(InvalidBase):
        Base.symbolic(-1.0)
    with pytest.raises(InvalidBase):
        Base(value=2.0, transcendental=False)


def test_mixing_bases_rejected():
    with pytest.raises(ExactArithmeticError):
        mono(1, 1, SYM) + mono(1, 1, SQ2)


coef = st.fractions(min_value=-5, max_value=5, max_denominator=7)
exps = st.integers(-6, 6)
scalars = st.lists(st.tuples(exps, coef), max_size=3).map(lambda t: ExactScalar(tuple(t), SYM, 2))


@given(scalars, scalars, scalars)
def test_ring_axioms(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) + c == a + (b + c)
    assert a * (b + c) == a * b + a * c
    assert a - a == 0


@given(scalars, scalars)
def test_float_is_homomorphic(a, b):
    assert float(a * b) == pytest.approx(float(a) * float(b), rel=1e-9, abs=1e-9)
    assert float(a + b) == pytest.approx(float(a) + float(b), rel=1e-9, abs=1e-9)


def test_ratio_rational():
    # zeta^(4/2) = 2 for zeta = sqrt2
    assert ratio_is_rational(mono(3, 4, SQ2), mono(1, 0, SQ2))
    assert not ratio_is_rational(mono(3, 2, SQ2), mono(1, 0, SQ2))
    assert not ratio_is_rational(mono(3, 1, SQ2), mono(1, 0, SQ2))
    assert not ratio_is_rational(mono(1, 2), mono(1, 0))


def test_det_and_inverse():
    z = mono(0, 0) - mono(0, 0)
    M = ((mono(1, 1), z), (z, mono(1, -1)))
    assert det(M) == 1
    Minv = inverse_unimodular(M)
    P = matmul(M, Minv)
    assert P[0][0] == 1 and P[1][1] == 1 and P[0][1].is_zero()
