"""Exact Laurent polynomials in a single root of a declared base.

Entries of lattice matrices are represented as finite sums
``sum_k c_k * zeta**(k/root)`` with rational ``c_k``.  The base ``zeta`` is
either flagged transcendental (a formal symbol) or an exact rational radical
``radicand**(1/index)``; in the latter case terms whose exponents differ by a
rational power are folded together so that equality is decided exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd


class ExactArithmeticError(ValueError):
    pass


class UnsupportedEntry(ExactArithmeticError):
    """An operation needs full field arithmetic (entry is not a monomial)."""


class InvalidBase(ExactArithmeticError):
    pass


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(x)


def _iroot(n: int, k: int) -> int | None:
    """Exact integer k-th root of n >= 0, or None."""
    if n < 0:
        return None
    if n < 2:
        return n
    x = int(round(n ** (1.0 / k)))
    for cand in (x - 1, x, x + 1):
        if cand >= 0 and cand**k == n:
            return cand
    # float guess may be far off for huge n; fall back to Newton
    lo, hi = 0, 1 << (n.bit_length() // k + 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**k < n:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo**k == n else None


def _rational_root(q: Fraction, k: int) -> Fraction | None:
    a = _iroot(q.numerator, k)
    b = _iroot(q.denominator, k)
    if a is None or b is None:
        return None
    return Fraction(a, b)


@dataclass(frozen=True)
class Base:
    """The formal base zeta.

    ``transcendental=True`` makes every nonzero power of zeta irrational.
    Otherwise zeta must be the exact radical ``radicand**(1/index)``.
    """

    symbol: str = "zeta"
    value: float = 2.0**0.5
    transcendental: bool = True
    radicand: Fraction | None = None
    index: int = 1

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidBase(f"base {self.symbol} must be positive, got {self.value}")
        if not self.transcendental:
            if self.radicand is None:
                raise InvalidBase(
                    f"base {self.symbol} is not flagged transcendental; give it exactly "
                    "as radicand**(1/index)"
                )
            if self.radicand <= 0 or self.index < 1:
                raise InvalidBase("radicand must be > 0 and index >= 1")
            exact = float(self.radicand) ** (1.0 / self.index)
            if abs(exact - self.value) > 1e-12 * exact:
                raise InvalidBase(
                    f"value {self.value!r} disagrees with {self.radicand}^(1/{self.index})"
                )

    @classmethod
    def radical(cls, radicand, index: int = 1, symbol: str = "zeta") -> "Base":
        r = _as_fraction(radicand)
        return cls(symbol=symbol, value=float(r) ** (1.0 / index), transcendental=False,
                   radicand=r, index=index)

    @classmethod
    def symbolic(cls, value: float, symbol: str = "zeta") -> "Base":
        return cls(symbol=symbol, value=float(value), transcendental=True)

    def rational_power(self, m: int, root: int) -> Fraction | None:
        """zeta**(m/root) if it is rational, else None."""
        if m == 0:
            return Fraction(1)
        if self.transcendental:
            return None
        n = self.index * root
        g = gcd(abs(m), n)
        r = _rational_root(self.radicand, n // g)
        if r is None:
            return None
        return r ** (m // g)

    def period(self, root: int) -> int | None:
        """Smallest p > 0 with zeta**(p/root) rational (None if no such p)."""
        if self.transcendental:
            return None
        for p in range(1, self.index * root + 1):
            if self.rational_power(p, root) is not None:
                return p
        return self.index * root  # unreachable: p = index*root always works


@dataclass(frozen=True)
class ExactScalar:
    """sum_k coeffs[k] * zeta**(k/root), stored canonically."""

    terms: tuple = ()
    base: Base = field(default_factory=Base)
    root: int = 2

    def __post_init__(self):
        object.__setattr__(self, "terms", self._canonical(self.terms))

    def _canonical(self, terms) -> tuple:
        acc: dict[int, Fraction] = {}
        p = self.base.period(self.root)
        for k, c in terms:
            c = _as_fraction(c)
            k = int(k)
            if p is not None:
                red = k % p
                c = c * self.base.rational_power(k - red, self.root)
                k = red
            acc[k] = acc.get(k, Fraction(0)) + c
        return tuple(sorted((k, c) for k, c in acc.items() if c != 0))

    # constructors -----------------------------------------------------
    @classmethod
    def rational(cls, c, base: Base, root: int) -> "ExactScalar":
        return cls(((0, c),), base, root)

    @classmethod
    def monomial(cls, c, k: int, base: Base, root: int) -> "ExactScalar":
        return cls(((k, c),), base, root)

    def _like(self, terms) -> "ExactScalar":
        return ExactScalar(tuple(terms), self.base, self.root)

    def _coerce(self, other) -> "ExactScalar":
        if isinstance(other, ExactScalar):
            if other.base != self.base or other.root != self.root:
                raise ExactArithmeticError("scalars over different bases")
            return other
        if isinstance(other, (int, Fraction)):
            return self._like(((0, other),))
        return NotImplemented

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._like(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self._like((k, -c) for k, c in self.terms)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self._like(
            (k1 + k2, c1 * c2) for k1, c1 in self.terms for k2, c2 in other.terms
        )

    __rmul__ = __mul__

    def __eq__(self, other):
        try:
            other = self._coerce(other)
        except ExactArithmeticError:
            return False
        if other is NotImplemented:
            return False
        return self.terms == other.terms

    def __hash__(self):
        return hash((self.terms, self.base, self.root))

    def is_zero(self) -> bool:
        return not self.terms

    def is_monomial(self) -> bool:
        return len(self.terms) == 1

    def inverse(self) -> "ExactScalar":
        if not self.is_monomial():
            raise UnsupportedEntry(f"cannot invert non-monomial {self}")
        (k, c), = self.terms
        return self._like(((-k, 1 / c),))

    def __float__(self):
        z = self.base.value
        return float(sum(float(c) * z ** (k / self.root) for k, c in self.terms))

    def __repr__(self):
        if not self.terms:
            return "0"
        s = self.base.symbol
        parts = [f"{c}" if k == 0 else f"{c}*{s}^({k}/{self.root})" for k, c in self.terms]
        return " + ".join(parts)


def ratio_is_rational(a: ExactScalar, b: ExactScalar) -> bool:
    """True iff a/b is rational; both must be nonzero monomials."""
    if not (a.is_monomial() and b.is_monomial()):
        raise UnsupportedEntry("ratio test needs monomial entries")
    (ka, _), = a.terms
    (kb, _), = b.terms
    return a.base.rational_power(ka - kb, a.root) is not None


# matrices are tuples of tuples of ExactScalar ----------------------------

def matmul(A, B):
    n, m, p = len(A), len(B), len(B[0])
    return tuple(
        tuple(_sum(A[i][k] * B[k][j] for k in range(m)) for j in range(p)) for i in range(n)
    )


def _sum(items):
    items = list(items)
    out = items[0]
    for x in items[1:]:
        out = out + x
    return out


def det(A) -> ExactScalar:
    """Laplace expansion; fine for the small d used here."""
    n = len(A)
    if n == 1:
        return A[0][0]
    if n == 2:
        return A[0][0] * A[1][1] - A[0][1] * A[1][0]
    total = None
    for j in range(n):
        if A[0][j].is_zero():
            continue
        minor = tuple(tuple(row[c] for c in range(n) if c != j) for row in A[1:])
        term = A[0][j] * det(minor)
        if j % 2:
            term = -term
        total = term if total is None else total + term
    if total is None:
        return A[0][0] - A[0][0]
    return total


def adjugate(A):
    n = len(A)
    if n == 1:
        return ((A[0][0] - A[0][0] + 1,),)
    cof = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = tuple(
                tuple(A[r][c] for c in range(n) if c != j) for r in range(n) if r != i
            )
            m = det(minor)
            cof[i][j] = -m if (i + j) % 2 else m
    return tuple(tuple(cof[j][i] for j in range(n)) for i in range(n))


def inverse_unimodular(A):
    """Inverse of a determinant-one exact matrix (adjugate, no division)."""
    if det(A) != 1:
        raise ExactArithmeticError("matrix determinant is not exactly 1")
    return adjugate(A)


def to_float(A):
    import numpy as np

    return np.array([[float(x) for x in row] for row in A], dtype=float)
