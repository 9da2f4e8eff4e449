import itertools
from fractions import Fraction

import numpy as np
import pytest

from lorentz_union.config import (AffineLattice, CapacityExceeded, ConfigError, UnionConfiguration,
                                  build_example_family, commensurability_check, config_from_dict,
                                  config_to_dict, integer_lattice, lattice_points_in_ball,
                                  validate_configuration)
from lorentz_union.exact import Base, ExactScalar, InvalidBase, det
from lorentz_union.geometry import lattice_points_naive

SQ2 = Base.radical(2, 2)
SYM = Base.symbolic(2.718281828459045)


def exact(rows, base=SQ2, root=2):
    """rows of (k, coeff) pairs or None for zero."""
    def s(e):
        return ExactScalar(() if e is None else ((e[0], Fraction(e[1])),), base, root)
    return tuple(tuple(s(e) for e in row) for row in rows)


def kinds(report):
    return {v.kind for v in report.violations}


def test_single_integer_lattice_ok():
    assert validate_configuration(UnionConfiguration(2, [integer_lattice(2)])).ok
    assert validate_configuration(UnionConfiguration(3, [integer_lattice(3)])).ok


def test_duplicate_integer_lattices_commensurable():
    cfg = UnionConfiguration(2, [integer_lattice(2, density=Fraction(1, 2), label=1),
                                 integer_lattice(2, density=Fraction(1, 2), label=2)])
    rep = validate_configuration(cfg)
    assert kinds(rep) == {"commensurable"}
    assert rep.violations[0].pair == (1, 2)


def test_example_family_sqrt2_ok():
    assert validate_configuration(build_example_family(2, 2, SQ2)).ok


def test_example_family_rational_zeta_fails():
    rep = validate_configuration(build_example_family(2, 2, Base.radical(2, 1)))
    assert kinds(rep) == {"commensurable"}


def test_density_sum_violation():
    cfg = UnionConfiguration(2, [integer_lattice(2, density=Fraction(1, 2))])
    assert kinds(validate_configuration(cfg)) == {"density_sum"}


def test_float_mismatch_reported():
    lat = integer_lattice(2)
    bad = AffineLattice(lat.density, lat.matrix, lat.omega, 1,
                        float_matrix=np.array([[1.0 + 1e-9, 0.0], [0.0, 1.0]]))
    assert "float_mismatch" in kinds(validate_configuration(UnionConfiguration(2, [bad])))


def test_determinant_violation():
    M = exact([[(0, 2), None], [None, (0, 1)]])
    lat = AffineLattice(1, M, np.zeros(2), 1)
    assert "determinant" in kinds(validate_configuration(UnionConfiguration(2, [lat])))


def test_asserted_mode_warns_and_skips():
    cfg = UnionConfiguration(2, [integer_lattice(2, density=Fraction(1, 2), label=1),
                                 integer_lattice(2, density=Fraction(1, 2), label=2)], mode="asserted")
    with pytest.warns(UserWarning):
        rep = validate_configuration(cfg)
    assert rep.ok and rep.warnings


def test_float_only_matrix_needs_asserted_mode():
    lat1 = AffineLattice(Fraction(1, 2), None, np.zeros(2), 1, float_matrix=np.eye(2))
    lat2 = AffineLattice(Fraction(1, 2), None, np.zeros(2), 2,
                         float_matrix=np.array([[2.0, 0.0], [0.0, 0.5]]))
    assert kinds(validate_configuration(UnionConfiguration(2, [lat1, lat2]))) == {"undecidable"}


def test_commensurability_examples():
    I = exact([[(0, 1), None], [None, (0, 1)]])
    assert commensurability_check(I, exact([[(0, 2), None], [None, (0, "1/2")]]))
    # 2^(-1/4) diag(sqrt2, 1) = diag(zeta^(1/2), zeta^(-1/2)) with zeta = sqrt2
    assert not commensurability_check(I, exact([[(1, 1), None], [None, (-1, 1)]]))
    # sqrt2 * [[1,0],[1,1/2]] and (1/sqrt2) * [[2,1],[0,1]]: scalar times rational
    A = exact([[(2, 1), None], [(2, 1), (2, "1/2")]])
    B = exact([[(-2, 2), (-2, 1)], [None, (-2, 1)]])
    assert det(A) == 1 and det(B) == 1
    assert commensurability_check(A, B)


def test_non_monomial_product_raises():
    from lorentz_union.exact import UnsupportedEntry

    one = ExactScalar(((0, 1),), SYM, 2)
    z = one - one
    M = ((one, one + ExactScalar(((1, 1),), SYM, 2)), (z, one))
    I = ((one, z), (z, one))
    with pytest.raises(UnsupportedEntry):
        commensurability_check(M, I)


@pytest.mark.parametrize("d", [2, 3])
def test_family_symmetry_reflexivity_and_incommensurability(d):
    cfg = build_example_family(8, d, SYM)
    mats = [lat.matrix for lat in cfg.lattices]
    for M in mats:
        assert det(M) == 1
        assert commensurability_check(M, M)
    for a, b in itertools.combinations(range(8), 2):
        ab = commensurability_check(mats[a], mats[b])
        assert ab == commensurability_check(mats[b], mats[a])
        assert not ab
    assert validate_configuration(cfg).ok


def test_family_n1_matrix():
    cfg = build_example_family(1, 2, SQ2)
    M = cfg.lattices[0].float_matrix
    z = 2 ** 0.5
    assert np.allclose(M, z ** -0.5 * np.diag([z, 1.0]), rtol=1e-15)


def test_invalid_base_rejected():
    with pytest.raises(InvalidBase):
        build_example_family(2, 2, Base(value=0.0, transcendental=True))


def test_ball_examples():
    lat = integer_lattice(2)
    pts = lattice_points_in_ball(lat, [0, 0], 1.0)
    got = sorted(map(tuple, np.round(pts).astype(int)))
    assert got == sorted([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)])
    assert len(lattice_points_in_ball(lat, [0.5, 0.5], 0.4)) == 0


def test_ball_capacity():
    with pytest.raises(CapacityExceeded):
        lattice_points_in_ball(integer_lattice(2), [0, 0], 1e4, cap=1000)


def _random_lattice(rng, d):
    A = rng.normal(size=(d, d))
    while np.linalg.cond(A) > 20:
        A = rng.normal(size=(d, d))
    A /= np.abs(np.linalg.det(A)) ** (1 / d)
    if np.linalg.det(A) < 0:
        A[0] *= -1
    dens = Fraction(int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    return AffineLattice(dens, None, rng.random(d), 1, float_matrix=A)


def test_ball_matches_naive_oracle():
    rng = np.random.default_rng(5)
    for k in range(1000):
        d = 2 if k % 2 else 3
        lat = _random_lattice(rng, d)
        c = rng.uniform(-10, 10, d)
        r = rng.uniform(0, 5)
        a = lattice_points_in_ball(lat, c, r)
        b, _ = lattice_points_naive(lat, c, r)
        assert len(a) == len(b)
        assert np.array_equal(a[np.lexsort(a.T)], b[np.lexsort(b.T)])


def test_json_round_trip():
    cfg = build_example_family(3, 3, SYM)
    back = config_from_dict(config_to_dict(cfg))
    for a, b in zip(cfg.lattices, back.lattices):
        assert a.matrix == b.matrix
        assert np.array_equal(a.omega, b.omega)
        assert a.density == b.density
    assert validate_configuration(back).ok


def test_json_radical_base_round_trip():
    cfg = build_example_family(2, 2, SQ2)
    back = config_from_dict(config_to_dict(cfg))
    assert validate_configuration(back).ok


def test_untagged_irrational_base_rejected():
    data = config_to_dict(build_example_family(2, 2, SQ2))
    for lat in data["lattices"]:
        base = lat["matrix"]["base"]
        base.pop("radicand")
        base.pop("index")
    with pytest.raises(ConfigError):
        config_from_dict(data)
