"""Union-of-lattices scatterer configurations.

A lattice with label i is the point set ``nbar_i**(-1/d) (Z^d + omega_i) M_i``
(row-vector convention).  Densities are exact rationals so the normalisation
``sum nbar_i == 1`` is checked exactly; matrices are exact where possible so that
commensurability can be decided.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exact import (
    Base,
    ExactArithmeticError,
    ExactScalar,
    InvalidBase,
    UnsupportedEntry,
    det,
    inverse_unimodular,
    matmul,
    ratio_is_rational,
    to_float,
)

__all__ = [
    "AffineLattice",
    "UnionConfiguration",
    "ValidationReport",
    "Violation",
    "CapacityExceeded",
    "ConfigError",
    "validate_configuration",
    "commensurability_check",
    "build_example_family",
    "lattice_points_in_ball",
    "integer_lattice",
    "load_config",
    "dump_config",
]

FLOAT_TOL = 1e-14


class ConfigError(ValueError):
    pass


class CapacityExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AffineLattice:
    density: Fraction
    matrix: tuple | None  # exact d x d matrix of ExactScalar, None if float-only
    omega: np.ndarray
    label: int
    float_matrix: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "density", Fraction(self.density))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        if self.float_matrix is None:
            if self.matrix is None:
                raise ConfigError("lattice needs an exact or a floating matrix")
            object.__setattr__(self, "float_matrix", to_float(self.matrix))
        else:
            object.__setattr__(self, "float_matrix", np.asarray(self.float_matrix, dtype=float))
        if self.density <= 0:
            raise ConfigError(f"lattice {self.label}: density must be positive")
        if self.omega.shape != (self.dim,):
            raise ConfigError(f"lattice {self.label}: omega has wrong shape")

    @property
    def dim(self) -> int:
        return self.float_matrix.shape[0]

    @property
    def scale(self) -> float:
        return float(self.density) ** (-1.0 / self.dim)

    @property
    def basis(self) -> np.ndarray:
        """Physical basis rows: point(m) = (m + omega) @ basis."""
        return self.scale * self.float_matrix

    @property
    def inverse_basis(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    def point(self, m) -> np.ndarray:
        return (np.asarray(m, dtype=float) + self.omega) @ self.basis


@dataclass(frozen=True, eq=False)
class UnionConfiguration:
    d: int
    lattices: tuple
    mode: str = "checked"

    def __post_init__(self):
        object.__setattr__(self, "lattices", tuple(self.lattices))
        if self.d < 2:
            raise ConfigError("dimension must be >= 2")
        if self.mode not in ("checked", "asserted"):
            raise ConfigError(f"unknown incommensurability mode {self.mode!r}")
        for lat in self.lattices:
            if lat.dim != self.d:
                raise ConfigError(f"lattice {lat.label} has dimension {lat.dim} != {self.d}")

    @property
    def N(self) -> int:
        return len(self.lattices)

    @property
    def densities(self) -> list[Fraction]:
        return [lat.density for lat in self.lattices]

    def arrays(self):
        """(bases, inverse bases, omegas) stacked for the compiled kernels."""
        bases = np.stack([lat.basis for lat in self.lattices])
        invs = np.stack([lat.inverse_basis for lat in self.lattices])
        omegas = np.stack([lat.omega for lat in self.lattices])
        return bases, invs, omegas


@dataclass(frozen=True)
class Violation:
    kind: str  # density_sum | determinant | float_mismatch | commensurable | undecidable
    detail: str
    pair: tuple | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            lines = ["ok"]
        else:
            lines = [f"{v.kind}: {v.detail}" for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def commensurability_check(Mi, Mj) -> bool:
    """True iff Mi Mj^{-1} lies in the commensurator of SL(d, Z).

    Decided by testing that every pair of nonzero entries of the exact product
    has a rational ratio.  Raises UnsupportedEntry when an entry of the
    product has more than one term.
    """
    Mi, Mj = _common_base(Mi, Mj)
    P = matmul(Mi, inverse_unimodular(Mj))
    nonzero = [x for row in P for x in row if not x.is_zero()]
    for x in nonzero:
        if not x.is_monomial():
            raise UnsupportedEntry(f"product entry {x!r} is not a monomial")
    ref = nonzero[0]
    return all(ratio_is_rational(x, ref) for x in nonzero[1:])


def _is_rational_matrix(M) -> bool:
    return all(k == 0 for row in M for x in row for k, _ in x.terms)


def _rebase(M, like: ExactScalar):
    return tuple(tuple(ExactScalar(x.terms, like.base, like.root) for x in row) for row in M)


def _common_base(Mi, Mj):
    a, b = Mi[0][0], Mj[0][0]
    if a.base == b.base and a.root == b.root:
        return Mi, Mj
    if _is_rational_matrix(Mi):
        return _rebase(Mi, b), Mj
    if _is_rational_matrix(Mj):
        return Mi, _rebase(Mj, a)
    raise UnsupportedEntry("matrices are written over different bases")


def validate_configuration(cfg: UnionConfiguration) -> ValidationReport:
    violations = []
    notes = []
    total = sum(cfg.densities, Fraction(0))
    if total != 1:
        violations.append(Violation("density_sum", f"densities sum to {total}, not 1"))
    for lat in cfg.lattices:
        if lat.matrix is not None:
            try:
                dt = det(lat.matrix)
            except ExactArithmeticError as exc:
                violations.append(Violation("determinant", f"lattice {lat.label}: {exc}"))
                continue
            if dt != 1:
                violations.append(
                    Violation("determinant", f"lattice {lat.label}: det = {dt!r}, not 1")
                )
            exact_f = to_float(lat.matrix)
            err = np.abs(exact_f - lat.float_matrix)
            scale = np.maximum(np.abs(exact_f), 1e-300)
            if np.any(err > FLOAT_TOL * scale):
                violations.append(
                    Violation("float_mismatch", f"lattice {lat.label}: float matrix drifts "
                              f"from exact by {err.max():.3g}")
                )
        else:
            fd = np.linalg.det(lat.float_matrix)
            if abs(fd - 1.0) > 1e-12:
                violations.append(
                    Violation("determinant", f"lattice {lat.label}: float det = {fd!r}")
                )
    if cfg.mode == "asserted":
        notes.append(
            "incommensurability ASSERTED by the user, not checked; limit laws assume it holds"
        )
        warnings.warn(notes[-1], stacklevel=2)
    else:
        for a in range(cfg.N):
            for b in range(a + 1, cfg.N):
                li, lj = cfg.lattices[a], cfg.lattices[b]
                pair = (li.label, lj.label)
                if li.matrix is None or lj.matrix is None:
                    violations.append(Violation(
                        "undecidable", f"pair {pair}: float-only matrix needs asserted mode", pair))
                    continue
                try:
                    comm = commensurability_check(li.matrix, lj.matrix)
                except (UnsupportedEntry, ExactArithmeticError) as exc:
                    violations.append(Violation("undecidable", f"pair {pair}: {exc}", pair))
                    continue
                if comm:
                    violations.append(
                        Violation("commensurable", f"pair {pair} is commensurable", pair)
                    )
    return ValidationReport(tuple(violations), tuple(notes))


def _diag(entries):
    d = len(entries)
    zero = entries[0] - entries[0]
    return tuple(tuple(entries[i] if i == j else zero for j in range(d)) for i in range(d))


def default_shifts(N: int, d: int) -> list:
    """omega_1 = 0 and generic shifts for the others, so no two lattices share a point."""
    roots = np.sqrt(np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37], dtype=float))
    return [np.zeros(d)] + [np.mod(i * roots[:d] + 0.5 * roots[d:2 * d], 1.0) for i in range(1, N)]


def build_example_family(N: int, d: int, base: Base, densities=None, omegas=None,
                         mode: str = "checked") -> UnionConfiguration:
    """M_i = zeta^{-i/d} diag(zeta^i, 1, ..., 1) for i = 1..N."""
    if not base.value > 0:
        raise InvalidBase("zeta must be positive")
    if densities is None:
        densities = [Fraction(1, N)] * N
    if omegas is None:
        omegas = default_shifts(N, d)
    lattices = []
    for i in range(1, N + 1):
        first = ExactScalar.monomial(1, i * (d - 1), base, d)
        rest = ExactScalar.monomial(1, -i, base, d)
        M = _diag([first] + [rest] * (d - 1))
        lattices.append(AffineLattice(Fraction(densities[i - 1]), M, omegas[i - 1], i))
    return UnionConfiguration(d, tuple(lattices), mode)


def integer_lattice(d: int, omega=None, density=1, label: int = 1) -> AffineLattice:
    base = Base.radical(1)
    one = ExactScalar.rational(1, base, d)
    M = _diag([one] * d)
    return AffineLattice(Fraction(density), M, np.zeros(d) if omega is None else omega, label)


def lattice_points_in_ball(lat: AffineLattice, center, r: float, cap: int = 2_000_000,
                           return_index: bool = False):
    """All lattice points y with |y - center| <= r.

    The ball is mapped to lattice coordinates and the integer box bounded by
    r times the largest singular value of the inverse basis is filtered.
    """
    if not (r >= 0 and np.isfinite(r)):
        raise ValueError("radius must be finite and >= 0")
    center = np.asarray(center, dtype=float)
    B = lat.basis
    Binv = lat.inverse_basis
    s = np.linalg.norm(Binv, 2)
    x = center @ Binv - lat.omega
    lo = np.ceil(x - r * s).astype(np.int64)
    hi = np.floor(x + r * s).astype(np.int64)
    sizes = np.maximum(hi - lo + 1, 0)
    if np.prod(sizes.astype(float)) > cap:
        raise CapacityExceeded(f"candidate box of {int(np.prod(sizes))} points exceeds cap {cap}")
    d = lat.dim
    if np.any(sizes == 0):
        pts = np.empty((0, d))
        return (pts, np.empty((0, d), dtype=np.int64)) if return_index else pts
    grids = np.meshgrid(*[np.arange(lo[k], hi[k] + 1) for k in range(d)], indexing="ij")
    m = np.stack([g.ravel() for g in grids], axis=1)
    y = (m + lat.omega) @ B
    keep = np.sum((y - center) ** 2, axis=1) <= r * r
    if return_index:
        return y[keep], m[keep]
    return y[keep]


# --- JSON ---------------------------------------------------------------

def _parse_base(spec: dict) -> Base:
    symbol = spec.get("symbol", "zeta")
    value = float(spec["value"])
    if spec.get("transcendental", False):
        return Base.symbolic(value, symbol)
    if "radicand" in spec:
        return Base.radical(spec["radicand"], int(spec.get("index", 1)), symbol)
    # a plain number that is exactly a simple rational
    q = Fraction(value).limit_denominator(10**6)
    if float(q) != value:
        raise ConfigError(
            f"base {symbol}={value!r} is neither flagged transcendental nor given exactly "
            "(add 'radicand'/'index')"
        )
    return Base.radical(q, 1, symbol)


def _parse_entry(entry, base: Base, root: int) -> ExactScalar:
    terms = entry if isinstance(entry, list) else [entry]
    return ExactScalar(tuple((int(t["k"]), Fraction(str(t["coeff"]))) for t in terms), base, root)


def config_from_dict(data: dict) -> UnionConfiguration:
    d = int(data["d"])
    mode = data.get("mode", "checked")
    lattices = []
    for idx, spec in enumerate(data["lattices"], start=1):
        mat = spec["matrix"]
        omega = spec.get("omega", [0.0] * d)
        if "entries" in mat:
            base = _parse_base(mat.get("base", {"value": 1.0, "transcendental": False}))
            M = tuple(tuple(_parse_entry(e, base, d) for e in row) for row in mat["entries"])
            lat = AffineLattice(Fraction(str(spec["density"])), M, omega, idx)
        elif "float" in mat:
            lat = AffineLattice(Fraction(str(spec["density"])), None, omega, idx,
                                float_matrix=np.array(mat["float"], dtype=float))
        else:
            raise ConfigError("matrix needs 'entries' or 'float'")
        lattices.append(lat)
    return UnionConfiguration(d, tuple(lattices), mode)


def load_config(path) -> UnionConfiguration:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def _entry_to_json(x: ExactScalar):
    terms = [{"k": k, "coeff": str(c)} for k, c in x.terms] or [{"k": 0, "coeff": "0"}]
    return terms[0] if len(terms) == 1 else terms


def _base_to_json(b: Base) -> dict:
    out = {"symbol": b.symbol, "value": b.value, "transcendental": b.transcendental}
    if not b.transcendental:
        out["radicand"] = str(b.radicand)
        out["index"] = b.index
    return out


def config_to_dict(cfg: UnionConfiguration) -> dict:
    lats = []
    for lat in cfg.lattices:
        if lat.matrix is not None:
            base = lat.matrix[0][0].base
            mat = {"base": _base_to_json(base),
                   "entries": [[_entry_to_json(x) for x in row] for row in lat.matrix]}
        else:
            mat = {"float": lat.float_matrix.tolist()}
        lats.append({"density": str(lat.density), "omega": lat.omega.tolist(), "matrix": mat})
    return {"d": cfg.d, "lattices": lats, "mode": cfg.mode}


def dump_config(cfg: UnionConfiguration, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
