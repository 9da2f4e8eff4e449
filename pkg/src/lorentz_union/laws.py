"""Tabulated limit laws, their compositions over a union, and closed-form constants."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import zeta as _zeta

from .geometry import unit_ball_volume

__all__ = [
    "Constants",
    "GridMismatch",
    "TableError",
    "TailModel",
    "SurvivalTable",
    "DensityTable",
    "exponential_law",
    "exponential_survival",
    "compose_union_survival",
    "generic_point_density",
    "consecutive_from_generic",
    "tail_constants",
    "small_xi_constants",
    "stitch_tail",
    "SingleLatticeKernel",
    "UnionKernelTables",
    "launch_from_lattice_density",
    "density_at_zero",
]


class GridMismatch(ValueError):
    pass


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class Constants:
    d: int

    @property
    def sigma_bar(self) -> float:
        return unit_ball_volume(self.d - 1)

    @property
    def zeta_d(self) -> float:
        return float(_zeta(self.d, 1))

    @property
    def A_d(self) -> float:
        return 2.0 ** (2 - self.d) / (self.d * (self.d + 1) * self.zeta_d)


def tail_constants(N: int, d: int, nbar) -> dict:
    """Leading large-xi constants of the consecutive and generic union densities."""
    c = Constants(d)
    prod = math.prod(float(x) for x in nbar)
    A, sb = c.A_d, c.sigma_bar
    return {
        "C_consecutive": N * (N + 1) * A**N * sb ** (N - 1) / (2**N * prod),
        "p_consecutive": -(N + 2),
        "C_generic": N * A**N * sb**N / (2**N * prod),
        "p_generic": -(N + 1),
    }


def small_xi_constants(N: int, d: int, nbar) -> dict:
    c = Constants(d)
    bracket = 1.0 - (1.0 - 1.0 / c.zeta_d) * sum(float(x) ** 2 for x in nbar)
    return {
        "consecutive_at_zero": c.sigma_bar * bracket,
        "generic_at_zero": c.sigma_bar,
        "generic_slope": -c.sigma_bar**2 * bracket,
        "bracket": bracket,
    }


# ---------------------------------------------------------------- tables

@dataclass(frozen=True)
class TailModel:
    """f(x) = C x^-p (1 + kappa x^-q) for x >= glue."""

    C: float
    p: float
    glue: float
    kappa: float = 0.0
    q: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.C * x ** (-self.p) * (1.0 + self.kappa * x ** (-self.q))

    def integral_from(self, x0: float) -> float:
        """int_x0^inf of the model (requires p > 1)."""
        return self.C * (x0 ** (1 - self.p) / (self.p - 1)
                         + self.kappa * x0 ** (1 - self.p - self.q) / (self.p + self.q - 1))

    def derivative(self) -> "TailModel":
        """-(d/dx) of the model, as a model with the same leading structure."""
        # -f' = C p x^-(p+1) + C kappa (p+q) x^-(p+q+1)
        return TailModel(self.C * self.p, self.p + 1, self.glue,
                         self.kappa * (self.p + self.q) / self.p if self.p else 0.0, self.q)

    def antiderivative(self) -> "TailModel":
        """int_x^inf of the model."""
        return TailModel(self.C / (self.p - 1), self.p - 1, self.glue,
                         self.kappa * (self.p - 1) / (self.p + self.q - 1), self.q)


def _interp(grid, vals, x, log=True):
    """Piecewise linear (in log value where both ends are positive)."""
    x = np.asarray(x, dtype=float)
    if not log:
        return np.interp(x, grid, vals)
    i = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, len(grid) - 2)
    x0, x1 = grid[i], grid[i + 1]
    y0, y1 = vals[i], vals[i + 1]
    t = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    pos = (y0 > 0) & (y1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.exp(np.log(np.where(pos, y0, 1.0)) * (1 - t) + np.log(np.where(pos, y1, 1.0)) * t)
    return np.where(pos, lg, y0 * (1 - t) + y1 * t)


@dataclass
class _Table:
    grid: np.ndarray
    values: np.ndarray
    tail: TailModel | None = None
    provenance: str = "empirical"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape or len(self.grid) < 2:
            raise TableError("grid and values must be 1-d of equal length >= 2")
        if np.any(np.diff(self.grid) <= 0):
            raise TableError("grid must be strictly increasing")

    @property
    def end(self) -> float:
        return float(self.tail.glue if self.tail else self.grid[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = _interp(self.grid, self.values, np.minimum(x, self.grid[-1]), self._log)
        if self.tail is None:
            return np.where(x > self.grid[-1], 0.0 if self._zero_beyond else self.values[-1], inside)
        tail = self.tail(np.maximum(x, self.tail.glue))
        return np.where(x >= self.tail.glue, tail, inside)

    # serialisation: CSV (17 significant digits) + JSON sidecar
    def save(self, path):
        path = Path(path)
        with open(path, "w", newline="\n") as f:
            f.write("xi,value\n")
            for g, v in zip(self.grid, self.values):
                f.write(f"{g:.17g},{v:.17g}\n")
        side = {"kind": type(self).__name__, "provenance": self.provenance,
                "tail": asdict(self.tail) if self.tail else None, "meta": self.meta,
                "n": len(self.grid)}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        side = json.loads(path.with_suffix(".json").read_text())
        tail = TailModel(**side["tail"]) if side.get("tail") else None
        return cls(data[:, 0], data[:, 1], tail, side.get("provenance", "empirical"),
                   side.get("meta", {}))


class SurvivalTable(_Table):
    """S on a grid from 0, optional power tail beyond ``tail.glue``."""

    _log = True
    _zero_beyond = False

    def __post_init__(self):
        super().__post_init__()
        if self.grid[0] != 0.0 or abs(self.values[0] - 1.0) > 1e-12:
            raise TableError("survival table must start at S(0) = 1")
        if np.any(np.diff(self.values) > 1e-12) or np.any(self.values < 0):
            raise TableError("survival values must be nonnegative and nonincreasing")
        if self.tail is not None:
            ref = float(_interp(self.grid, self.values, self.tail.glue))
            if ref > 0 and abs(self.tail(self.tail.glue) / ref - 1.0) > 0.01:
                raise TableError("tail model is discontinuous at the glue point")

    def density(self, smooth: float = 0.0) -> "DensityTable":
        return _differentiate(self, 1.0, smooth, provenance=f"d/dxi[{self.provenance}]")

    @classmethod
    def from_empirical(cls, emp, grid=None, step: float = 0.01, linear_max: float = 20.0):
        """Tabulate an EmpiricalSurvival (fine uniform grid, then log bins to xi_T)."""
        if grid is None:
            top = emp.samples[-1] if len(emp.samples) else linear_max
            top = min(top, emp.xi_T) if np.isfinite(emp.xi_T) else top
            lin = np.arange(0.0, min(linear_max, top), step)
            grid = lin if top <= linear_max else np.concatenate(
                [lin, linear_max * 1.05 ** np.arange(int(np.log(top / linear_max) / np.log(1.05)) + 1)])
            grid = np.unique(grid)
        vals = np.minimum.accumulate(np.asarray(emp(grid), float))
        vals[0] = 1.0
        return cls(np.asarray(grid, float), vals, None, "empirical")


class DensityTable(_Table):
    _log = True
    _zero_beyond = True

    adjustment: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise TableError("density values must be nonnegative")

    def integral(self) -> float:
        g, v = self.grid, self.values
        if self.tail is None:
            return float(np.trapezoid(v, g))
        k = np.searchsorted(g, self.tail.glue, side="right")
        gg = np.concatenate([g[:k], [self.tail.glue]])
        vv = np.concatenate([v[:k], [self.tail(self.tail.glue)]])
        return float(np.trapezoid(vv, gg) + self.tail.integral_from(self.tail.glue))

    def survival(self) -> SurvivalTable:
        g, v = self.grid, self.values
        if self.tail is not None:
            k = np.searchsorted(g, self.tail.glue, side="right")
            g = np.concatenate([g[:k], [self.tail.glue]]) if g[k - 1] < self.tail.glue else g[:k]
            v = self(g)
            beyond = self.tail.integral_from(self.tail.glue)
            stail = self.tail.antiderivative()
        else:
            beyond, stail = 0.0, None
        seg = 0.5 * (v[1:] + v[:-1]) * np.diff(g)
        S = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + beyond
        total = S[0]
        S = np.minimum(S / total, 1.0)
        if stail is not None:
            stail = TailModel(stail.C / total, stail.p, stail.glue, stail.kappa, stail.q)
        return SurvivalTable(g, S, stail, f"int[{self.provenance}]")


# ---------------------------------------------------------------- closed forms

def exponential_law(d: int, xi_max: float | None = None, n: int = 4001) -> DensityTable:
    sb = Constants(d).sigma_bar
    xi_max = 40.0 / sb if xi_max is None else xi_max
    g = np.linspace(0.0, xi_max, n)
    return DensityTable(g, sb * np.exp(-sb * g), None, "exponential")


def exponential_survival(d: int, xi_max: float | None = None, n: int = 4001) -> SurvivalTable:
    sb = Constants(d).sigma_bar
    xi_max = 40.0 / sb if xi_max is None else xi_max
    g = np.linspace(0.0, xi_max, n)
    return SurvivalTable(g, np.exp(-sb * g), None, "exponential")


def stitch_tail(table: SurvivalTable, C: float, p: float, glue: float = 10.0, d: int = 2,
                ) -> SurvivalTable:
    """Attach C x^-p (1 + kappa x^-(2/d)) at ``glue``, kappa set for continuity."""
    ref = float(table(glue))
    q = 2.0 / d
    kappa = (ref / (C * glue ** (-p)) - 1.0) * glue**q
    k = np.searchsorted(table.grid, glue, side="right")
    g = np.concatenate([table.grid[:k], [glue]]) if table.grid[k - 1] < glue else table.grid[:k]
    v = table(g)
    return SurvivalTable(g, v, TailModel(C, p, glue, kappa, q), f"stitched[{table.provenance}]")


# ---------------------------------------------------------------- composition

def _merge_grids(grids, rtol=1e-9):
    """Sorted union of grids; nodes closer than rtol (relative) collapse to one."""
    g = np.unique(np.concatenate(grids))
    keep = np.concatenate([[True], np.diff(g) > rtol * np.maximum(1.0, g[1:])])
    return g[keep]


def compose_union_survival(tables, nbar) -> SurvivalTable:
    """S(xi) = prod_i S_i(nbar_i xi) on the merged, rescaled grids."""
    nbar = [float(x) for x in nbar]
    if len(tables) != len(nbar):
        raise GridMismatch("one table per density is required")
    if abs(sum(nbar) - 1.0) > 1e-12:
        raise GridMismatch("densities must sum to 1")
    has_tail = all(t.tail is not None for t in tables)
    ends = [t.end / n for t, n in zip(tables, nbar)]
    lim = max(ends) if has_tail else min(t.grid[-1] / n for t, n in zip(tables, nbar))
    grid = _merge_grids([t.grid / n for t, n in zip(tables, nbar)])
    grid = grid[grid <= lim]
    if len(grid) < 2:
        raise GridMismatch("rescaled grids do not overlap")
    vals = np.ones_like(grid)
    for t, n in zip(tables, nbar):
        vals *= t(n * grid)
    tail = None
    if has_tail:
        C = math.prod(t.tail.C * n ** (-t.tail.p) for t, n in zip(tables, nbar))
        p = sum(t.tail.p for t in tables)
        q = tables[0].tail.q
        kappa = sum(t.tail.kappa * n ** (-t.tail.q) for t, n in zip(tables, nbar))
        tail = TailModel(C, p, float(grid[-1]), kappa, q)
        # first-order kappa composition: re-fit for continuity at the merged glue
        ref = vals[-1]
        tail = TailModel(C, p, tail.glue, (ref / (C * tail.glue ** (-p)) - 1.0) * tail.glue**q, q)
    vals = np.minimum.accumulate(np.clip(vals, 0.0, 1.0))
    vals[0] = 1.0
    return SurvivalTable(grid, vals, tail, "composed")


def _smooth_grid(table, h):
    """Uniform grid of step h on [0, end] (plus the end point)."""
    end = table.end if table.tail is None else table.tail.glue
    g = np.arange(0.0, end, h)
    return np.concatenate([g, [end]]) if g[-1] < end else g


def _differentiate(table: _Table, scale: float, smooth: float, provenance: str,
                   tail: TailModel | None = None) -> DensityTable:
    """-scale * d/dxi by second-order central differences; clip to >= 0 and renormalise."""
    g = _smooth_grid(table, smooth) if smooth > 0 else table.grid
    if table.tail is not None:
        g = g[g <= table.tail.glue]
    v = table(g)
    dv = -scale * np.gradient(v, g, edge_order=2)
    if tail is None and table.tail is not None:
        t = table.tail.derivative()
        tail = TailModel(scale * t.C, t.p, t.glue, t.kappa, t.q)
    neg = float(-np.trapezoid(np.minimum(dv, 0.0), g))
    dv = np.maximum(dv, 0.0)
    out = DensityTable(g, dv, tail, provenance)
    total = out.integral()
    # mass the table should carry: everything, or down to the last value without a tail
    target = 1.0 if tail is not None else 1.0 - float(v[-1] / v[0])
    f = target / total if total > 0 and target > 0 else 1.0
    out = DensityTable(g, dv * f, None if tail is None else
                       TailModel(tail.C * f, tail.p, tail.glue, tail.kappa, tail.q), provenance)
    out.adjustment = neg + abs(f - 1.0)
    return out


def generic_point_density(tables, nbar, smooth: float = 0.0) -> DensityTable:
    """Phi_P = -d/dxi prod_i S_i(nbar_i xi)."""
    comp = compose_union_survival(tables, nbar)
    out = _differentiate(comp, 1.0, smooth, "generic_point")
    out.meta["adjustment"] = out.adjustment
    return out


def consecutive_from_generic(phi_P: DensityTable, d: int, smooth: float = 0.0) -> DensityTable:
    """-(1/sigma_bar) d/dxi Phi_P."""
    sb = Constants(d).sigma_bar
    out = _differentiate(phi_P, 1.0 / sb, smooth, "consecutive")
    out.meta["adjustment"] = out.adjustment
    return out


def density_at_zero(grid, S, h: float = 0.1) -> float:
    """-S'(0) from a quadratic fit to a survival curve on [0, h]."""
    grid = np.asarray(grid, float)
    S = np.asarray(S, float)
    m = grid <= h + 1e-12
    c = np.polyfit(grid[m], S[m] - 1.0, 2)
    return float(-c[1])


# ---------------------------------------------------------------- kernels (d = 2)

@dataclass
class SingleLatticeKernel:
    """Single-lattice Phi_0(xi, w, z) summarised by conditional tails.

    T[a, p, r] = P(xi > E_a, w in cell p | z in cell r) for a launch from a
    lattice scatterer; ``tail_p`` is the survival exponent used beyond E[-1].
    """

    E: np.ndarray
    w_edges: np.ndarray
    z_edges: np.ndarray
    T: np.ndarray
    n_rows: np.ndarray  # rays per exit cell
    tail_p: float = 2.0

    @classmethod
    def from_histogram(cls, hist, label: int = 1, tail_p: float = 2.0) -> "SingleLatticeKernel":
        """From a JointKernelHistogram of a lattice launch with uniform exit parameter."""
        c = hist.counts[label - 1].astype(float)  # (A, P, R)
        rows = c.sum(axis=(0, 1))
        # censored rays: not in c; n_r inferred from uniform z assignment
        P = c.shape[1]
        n_r = rows + hist.censored * (rows / rows.sum() if rows.sum() else 0.0)
        cens_r = n_r - rows
        tail = np.concatenate([np.cumsum(c[::-1], axis=0)[::-1], np.zeros((1,) + c.shape[1:])])
        tail += (cens_r / P)[None, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            T = np.where(n_r > 0, tail / np.where(n_r > 0, n_r, 1.0), 0.0)
        return cls(np.asarray(hist.xi_edges, float), hist.w_edges, hist.z_edges, T, n_r, tail_p)

    @property
    def dw(self):
        return np.diff(self.w_edges)

    @property
    def dz(self):
        return np.diff(self.z_edges)

    def _tail_eval(self, F, u, p):
        """F tabulated at edges E along axis 0, evaluated at u (power tail beyond)."""
        u = np.asarray(u, float)
        E = self.E
        i = np.clip(np.searchsorted(E, u, side="right") - 1, 0, len(E) - 2)
        t = np.clip((u - E[i]) / (E[i + 1] - E[i]), 0.0, 1.0)
        ext = (len(F.shape) - 1) * (None,)
        inside = F[i] * (1 - t)[(...,) + ext] + F[i + 1] * t[(...,) + ext]
        beyond = F[-1] * ((E[-1] / np.maximum(u, E[-1])) ** p)[(...,) + ext]
        return np.where((u > E[-1])[(...,) + ext], beyond, inside)

    def exit_tail(self, u):
        """Phi(u, z) for each z cell: P(xi > u | z in r); shape (len(u), R)."""
        return self._tail_eval(self.T.sum(axis=1), u, self.tail_p)

    def pair_tail(self, u):
        """T(u, p, r); shape (len(u), P, R)."""
        return self._tail_eval(self.T, u, self.tail_p)

    def hit_density(self, u):
        """Phi(u, w) cell averages; shape (len(u), P)."""
        F = (self.T * self.dz[None, None, :]).sum(axis=2) / self.dw[None, :]
        return self._tail_eval(F, u, self.tail_p)

    def _hit_tail_at_edges(self):
        """dw_p * int_E^inf Phi(u, p) du at the edges, tail closed form."""
        F = (self.T * self.dz[None, None, :]).sum(axis=2) / self.dw[None, :]
        seg = 0.5 * (F[1:] + F[:-1]) * np.diff(self.E)[:, None]
        # Phi(u, w) ~ u^-tail_p beyond the last edge
        beyond = F[-1] * self.E[-1] / (self.tail_p - 1.0)
        U = np.concatenate([np.cumsum(seg[::-1], axis=0)[::-1], np.zeros((1, F.shape[1]))]) + beyond
        return U * self.dw[None, :]

    @property
    def generic_norm(self) -> float:
        """S(0) implied by the table before renormalisation (ideal value 1)."""
        return float(self._hit_tail_at_edges()[0].sum())

    def hit_tail(self, u):
        """dw_p int_u^inf Phi(u', p) du', renormalised so the p-sum is 1 at u = 0."""
        U = self._hit_tail_at_edges() / self.generic_norm
        return self._tail_eval(U, u, self.tail_p - 1.0)

    def generic_survival(self, u):
        return self.hit_tail(u).sum(axis=-1)

    def generic_survival_table(self) -> SurvivalTable:
        S = self.generic_survival(self.E)
        S = np.minimum.accumulate(np.clip(S / S[0], 0, 1))
        return SurvivalTable(self.E, S, None, "kernel_marginal")

    def consecutive_survival_table(self) -> SurvivalTable:
        """Phi-bar_0 survival with uniform z: average of exit tails over z."""
        S = (self.exit_tail(self.E) * self.dz[None, :]).sum(axis=1) / self.dz.sum()
        return SurvivalTable(self.E, np.minimum.accumulate(S / S[0]), None, "kernel_marginal")


@dataclass
class UnionKernelTables:
    """Composed transition masses for a union with single-lattice kernel ``single``.

    trans[i, r, j, a, p]: probability, given a launch from lattice i with exit
    cell r, of hitting lattice j next with xi in (E_a, E_a+1] and impact cell p.
    trans_over[i, r]: probability of xi > E[-1].
    stat[j, a, p], stat_over: the stationary (generic point) analogue.
    """

    E: np.ndarray
    w_edges: np.ndarray
    z_edges: np.ndarray
    nbar: np.ndarray
    trans: np.ndarray
    trans_over: np.ndarray
    stat: np.ndarray
    stat_over: float
    single: SingleLatticeKernel

    @property
    def N(self):
        return len(self.nbar)

    # identities ---------------------------------------------------------
    def normalization(self) -> np.ndarray:
        """sum_j int int Phi_0^(i->j) for each i and exit cell; shape (N, R)."""
        return self.trans.sum(axis=(2, 3, 4)) + self.trans_over

    def symmetry_l1(self, xi_groups: int = 10, cells: int = 5) -> np.ndarray:
        """Relative L1 between nbar_k Phi^(k->j)(xi, w, z) and nbar_j Phi^(j->k)(xi, z, w).

        Compared on a coarsened grid: xi bins merged into ``xi_groups`` groups of
        roughly equal mass and the w, z cells merged into ``cells`` blocks.
        """
        cm = self._coarse(xi_groups, cells)  # (i, r, j, a, p)
        N = self.N
        out = np.zeros((N, N))
        for k in range(N):
            for j in range(N):
                A = self.nbar[k] * cm[k, :, j]  # (r, a, p) with r = z, p = w
                B = self.nbar[j] * cm[j, :, k]  # (r', a, p'): swap roles
                Bs = np.transpose(B, (2, 1, 0))  # (p', a, r') -> index as (z=w', ...)
                out[k, j] = np.abs(A - Bs).sum() / np.abs(A).sum()
        return out

    def _coarse(self, xi_groups, cells):
        m = self.trans
        tot = m.sum(axis=(0, 1, 2, 4))
        cdf = np.cumsum(tot) / tot.sum()
        grp = np.minimum((cdf * xi_groups).astype(int), xi_groups - 1)
        grp = np.maximum.accumulate(grp)
        P = m.shape[-1]
        R = m.shape[1]
        cw = np.arange(P) * cells // P
        cz = np.arange(R) * cells // R
        out = np.zeros((self.N, cells, self.N, xi_groups, cells))
        for r in range(R):
            for p in range(P):
                np.add.at(out[:, cz[r], :, :, cw[p]], (slice(None), slice(None), grp),
                          m[:, r, :, :, p])
        return out

    def boundary_values(self) -> np.ndarray:
        """Phi^(j)(0, w) per w cell; ideal value nbar_j; shape (N, P)."""
        phi0 = self.single.hit_density(np.zeros(1))[0] / self.single.generic_norm
        return self.nbar[:, None] * phi0[None, :]

    def boundary_values_raw(self) -> np.ndarray:
        """As boundary_values without the table renormalisation."""
        phi0 = self.single.hit_density(np.zeros(1))[0]
        return self.nbar[:, None] * phi0[None, :]

    def stationary_density(self, xi) -> np.ndarray:
        """Phi^(j)(xi, w) cell averages; shape (len(xi), N, P)."""
        xi = np.asarray(xi, float)
        out = np.empty((len(xi), self.N, self.single.T.shape[1]))
        S = self._S_factors(xi)
        phi = [self.single.hit_density(n * xi) / self.single.generic_norm for n in self.nbar]
        for j in range(self.N):
            rest = np.prod(np.delete(S, j, axis=0), axis=0) if self.N > 1 else np.ones(len(xi))
            out[:, j, :] = self.nbar[j] * phi[j] * rest[:, None]
        return out

    def marginal_chain_rhs(self, xi) -> np.ndarray:
        """nbar_j int_xi^inf Phi_0^(j)(xi', w) dxi' with w in the exit slot; (len(xi), N, R)."""
        xi = np.asarray(xi, float)
        S = self._S_factors(xi)
        R = self.single.T.shape[2]
        out = np.empty((len(xi), self.N, R))
        for j in range(self.N):
            rest = np.prod(np.delete(S, j, axis=0), axis=0) if self.N > 1 else np.ones(len(xi))
            out[:, j, :] = self.nbar[j] * self.single.exit_tail(self.nbar[j] * xi) * rest[:, None]
        return out

    def marginal_chain_error(self, xi_max: float = 20.0) -> float:
        """Relative L1 between both sides of the marginal-chain identity on xi <= xi_max.

        The left side carries w in the hit slot (Phi(xi, w) density), the right
        side in the exit slot; agreement reflects the w <-> z symmetry of the table.
        """
        E = self.E[self.E <= xi_max]
        lhs = self.stationary_density(E)
        rhs = self.marginal_chain_rhs(E)
        return float(np.abs(lhs - rhs).sum() / np.abs(lhs).sum())

    def _S_factors(self, xi):
        return np.stack([self.single.generic_survival(n * xi) for n in self.nbar])

    # derived laws -------------------------------------------------------
    def consecutive_survival(self, xi=None) -> np.ndarray:
        """Survival of Phi-bar_0,P: sum_i nbar_i * (1/sigma_bar) int P(xi' > xi | i, z) dz."""
        xi = self.E if xi is None else np.asarray(xi, float)
        dz = self.single.dz
        S = self._S_factors(xi)
        tot = np.zeros(len(xi))
        for i in range(self.N):
            rest = np.prod(np.delete(S, i, axis=0), axis=0) if self.N > 1 else np.ones(len(xi))
            ex = (self.single.exit_tail(self.nbar[i] * xi) * dz[None, :]).sum(axis=1) / dz.sum()
            tot += self.nbar[i] * ex * rest
        return tot

    def consecutive_survival_table(self) -> SurvivalTable:
        S = self.consecutive_survival()
        S = np.minimum.accumulate(np.clip(S / S[0], 0.0, 1.0))
        return SurvivalTable(self.E, S, None, "composed_kernel")

    def generic_survival_table(self) -> SurvivalTable:
        S = np.prod(self._S_factors(self.E), axis=0)
        S = np.minimum.accumulate(np.clip(S / S[0], 0.0, 1.0))
        return SurvivalTable(self.E, S, None, "composed_kernel")

    def consecutive_density_table(self) -> DensityTable:
        return self.consecutive_survival_table().density()

    # serialisation ----------------------------------------------------------
    def to_rows(self):
        """(i, j, r, xi_lo, xi_hi, w_lo, w_hi, z_lo, z_hi, mass) rows, nonzero cells."""
        i, r, j, a, p = np.nonzero(self.trans)
        E, we, ze = self.E, self.w_edges, self.z_edges
        return np.column_stack([i + 1, j + 1, E[a], E[a + 1], we[p], we[p + 1], ze[r], ze[r + 1],
                                self.trans[i, r, j, a, p]])

    def save(self, path):
        np.savez_compressed(path, E=self.E, w_edges=self.w_edges, z_edges=self.z_edges,
                            nbar=self.nbar, trans=self.trans, trans_over=self.trans_over,
                            stat=self.stat, stat_over=self.stat_over, T=self.single.T,
                            n_rows=self.single.n_rows, sE=self.single.E,
                            tail_p=self.single.tail_p)

    @classmethod
    def load(cls, path) -> "UnionKernelTables":
        z = np.load(path)
        single = SingleLatticeKernel(z["sE"], z["w_edges"], z["z_edges"], z["T"], z["n_rows"],
                                     float(z["tail_p"]))
        return cls(z["E"], z["w_edges"], z["z_edges"], z["nbar"], z["trans"], z["trans_over"],
                   z["stat"], float(z["stat_over"]), single)


def launch_from_lattice_density(single: SingleLatticeKernel, nbar, E=None):
    """Compose the union kernels from a single-lattice kernel table.

    Returns (Phi-bar_0,P as a DensityTable, UnionKernelTables).  Cell masses use
    the exact two-factor product rule Delta(fg) = Delta f * avg g + avg f * Delta g,
    so sums over targets telescope to one minus the overflow mass.
    """
    nbar = np.array([float(x) for x in nbar])
    N = len(nbar)
    E = single.E if E is None else np.asarray(E, float)
    A = len(E) - 1
    P = single.T.shape[1]
    R = single.T.shape[2]
    S = np.stack([single.generic_survival(n * E) for n in nbar])  # (N, A+1)
    Uh = np.stack([single.hit_tail(n * E) for n in nbar])  # (N, A+1, P)
    pair = np.stack([single.pair_tail(n * E) for n in nbar])  # (N, A+1, P, R)
    ex = np.stack([single.exit_tail(n * E) for n in nbar])  # (N, A+1, R)

    def others(excl):
        keep = [k for k in range(N) if k not in excl]
        return np.prod(S[keep], axis=0) if keep else np.ones(A + 1)

    def avg(x):
        return 0.5 * (x[1:] + x[:-1])

    trans = np.zeros((N, R, N, A, P))
    trans_over = np.zeros((N, R))
    for i in range(N):
        rest_i = others({i})
        # same lattice: -d/dxi [T(nbar_i xi, p, r)] * prod_{k != i} S
        dT = pair[i][:-1] - pair[i][1:]  # (A, P, R)
        trans[i, :, i] = np.transpose(dT * avg(rest_i)[:, None, None], (2, 0, 1))
        for j in range(N):
            if j == i:
                continue
            rest = others({i, j})
            dU = Uh[j][:-1] - Uh[j][1:]  # (A, P)
            g = ex[i] * rest[:, None]  # (A+1, R)
            trans[i, :, j] = np.einsum("ap,ar->rap", dU, avg(g))
        trans_over[i] = ex[i][-1] * rest_i[-1]
    # stationary: Phi^(j) masses
    stat = np.zeros((N, A, P))
    for j in range(N):
        rest = others({j})
        dU = Uh[j][:-1] - Uh[j][1:]
        stat[j] = dU * avg(rest)[:, None]
    stat_over = float(np.prod(S[:, -1]))
    tables = UnionKernelTables(E, single.w_edges, single.z_edges, nbar, np.clip(trans, 0, None),
                               trans_over, np.clip(stat, 0, None), stat_over, single)
    return tables.consecutive_density_table(), tables
