"""Monte Carlo free-path ensembles and their empirical summaries."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit
from scipy import stats as sps

from ._march import march_batch, marcher_arrays
from .config import UnionConfiguration, lattice_points_in_ball
from .geometry import LaunchInsideScatterer, perp_in_frame, sphere_point_from_exit, unit_ball_volume

__all__ = [
    "EmptySample",
    "InsufficientTail",
    "LaunchSpec",
    "EmpiricalSurvival",
    "Histogram",
    "LogBinHistogram",
    "JointKernelHistogram",
    "FPLEnsemble",
    "simulate_fpl_ensemble",
    "poisson_fpl_ensemble",
    "ks_distance",
    "dkw_epsilon",
    "TailFit",
    "fit_tail_exponent",
    "independence_diagnostic",
    "default_xi_edges",
    "kernel_xi_edges",
    "rng_stream",
    "GENERIC_POINT",
]

CHUNK = 8192
# fixed irrational-looking launch point for "generic" runs
GENERIC_POINT = np.array([0.41421356237309515, 0.7320508075688772, 0.2360679774997898,
                          0.6457513110645907, 0.3166247903554, 0.6055512754639891])


class EmptySample(ValueError):
    pass


class InsufficientTail(ValueError):
    pass


def rng_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for work unit ``index`` (counter-based spawn)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def uniform_directions(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def uniform_ball(rng, n, k):
    """Uniform points in the unit k-ball."""
    if k == 1:
        return rng.uniform(-1.0, 1.0, (n, 1))
    g = rng.standard_normal((n, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (rng.random(n) ** (1.0 / k))[:, None]


# ---------------------------------------------------------------- launches

@dataclass(frozen=True)
class LaunchSpec:
    """How rays start.

    mode: "generic" (fixed point q, beta = 0), "lattice" (from the scatterer
    at the m = 0 point of lattice ``lattice``, exit parameter uniform in the
    unit (d-1)-ball), "lattice_all" (as "lattice" with the source lattice drawn
    with probability nbar_j), or "radial" (beta(v) = v, exit parameter 0).
    """

    mode: str = "generic"
    rho: float = 1e-3
    T: float = 1e5
    q: tuple | None = None
    lattice: int = 1

    @classmethod
    def parse(cls, text: str, rho: float, T: float, q=None) -> "LaunchSpec":
        text = text.strip()
        if text == "generic":
            return cls("generic", rho, T, None if q is None else tuple(q))
        if text in ("lattice:all", "lattice_all"):
            return cls("lattice_all", rho, T)
        if text.startswith("lattice:"):
            return cls("lattice", rho, T, lattice=int(text.split(":", 1)[1]))
        if text.startswith("radial:"):
            return cls("radial", rho, T, lattice=int(text.split(":", 1)[1]))
        raise ValueError(f"unknown launch spec {text!r}")

    def describe(self) -> str:
        if self.mode in ("lattice", "radial"):
            return f"{self.mode}:{self.lattice}"
        return self.mode


def _launch_rays(cfg: UnionConfiguration, spec: LaunchSpec, rng, n):
    """(launch points, directions, exit parameters, source labels)."""
    d = cfg.d
    V = uniform_directions(rng, n, d)
    if spec.mode == "generic":
        q = np.asarray(spec.q if spec.q is not None else GENERIC_POINT[:d], dtype=float)
        return np.broadcast_to(q, (n, d)).copy(), V, np.zeros((n, d - 1)), np.zeros(n, np.int64)
    if spec.mode == "lattice_all":
        w = np.array([float(x) for x in cfg.densities])
        src = rng.choice(cfg.N, size=n, p=w / w.sum())
    else:
        src = np.full(n, _index_of(cfg, spec.lattice))
    centres = np.stack([lat.point(np.zeros(d)) for lat in cfg.lattices])[src]
    if spec.mode == "radial":
        z = np.zeros((n, d - 1))
        beta = V.copy()
    else:
        z = uniform_ball(rng, n, d - 1)
        beta = sphere_point_from_exit(z, V)
    labels = np.array([lat.label for lat in cfg.lattices])[src]
    return centres + spec.rho * beta, V, z, labels


def _index_of(cfg, label):
    for i, lat in enumerate(cfg.lattices):
        if lat.label == label:
            return i
    raise ValueError(f"no lattice with label {label}")


def _check_generic_launch(cfg, spec):
    if spec.mode != "generic":
        return
    q = np.asarray(spec.q if spec.q is not None else GENERIC_POINT[:cfg.d], dtype=float)
    for lat in cfg.lattices:
        if len(lattice_points_in_ball(lat, q, spec.rho)):
            raise LaunchInsideScatterer(f"generic launch point lies in a scatterer of lattice {lat.label}")


def _run_chunk(args):
    cfg, spec, seed, idx, n = args
    rng = rng_stream(seed, idx)
    Q, V, z, src = _launch_rays(cfg, spec, rng, n)
    bases, invs, omegas, sbound, delta = marcher_arrays(cfg)
    t, h, _, Y = march_batch(Q, V, float(spec.rho), float(spec.T), bases, invs, omegas, sbound, delta)
    hit = h >= 0
    labels = np.array([lat.label for lat in cfg.lattices])
    lab = np.where(hit, labels[np.maximum(h, 0)], 0)
    # impact parameter b = (w K(v))_perp, w = (hit point - y) / rho
    hitpt = Q + t[:, None] * V
    w = np.where(hit[:, None], (hitpt - Y) / spec.rho, 0.0)
    b = perp_in_frame(w, V)
    b[~hit] = np.nan
    xi = np.where(hit, t * spec.rho ** (cfg.d - 1), np.nan)
    return xi, lab, b, z, src


# ---------------------------------------------------------------- summaries

@dataclass
class EmpiricalSurvival:
    """S_hat(x) = (#{xi > x} + censored) / n."""

    samples: np.ndarray
    n: int
    censored: int = 0
    xi_T: float = np.inf

    def __post_init__(self):
        self.samples = np.sort(np.asarray(self.samples, dtype=float))
        if len(self.samples) + self.censored != self.n:
            raise ValueError("samples + censored must equal n")

    @classmethod
    def from_xi(cls, xi, xi_T=np.inf):
        xi = np.asarray(xi, dtype=float)
        ok = np.isfinite(xi)
        return cls(xi[ok], len(xi), int((~ok).sum()), xi_T)

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n if self.n else 0.0

    def __call__(self, x):
        if self.n == 0:
            raise EmptySample("empty sample")
        x = np.asarray(x, dtype=float)
        above = len(self.samples) - np.searchsorted(self.samples, x, side="right")
        return (above + self.censored) / self.n

    def left_limit(self, x):
        x = np.asarray(x, dtype=float)
        above = len(self.samples) - np.searchsorted(self.samples, x, side="left")
        return (above + self.censored) / self.n

    def to_rows(self):
        """(xi, S_hat) at each sample point, plus (0, 1)."""
        if self.n == 0:
            return np.zeros((0, 2))
        x = np.concatenate([[0.0], self.samples])
        return np.column_stack([x, self(x)])


@dataclass
class Histogram:
    """Counts on bins (lo, hi]; density = counts / (n * width)."""

    edges: np.ndarray
    counts: np.ndarray
    n: int

    @classmethod
    def from_samples(cls, samples, edges, n=None):
        samples = np.asarray(samples, dtype=float)
        samples = samples[np.isfinite(samples)]
        edges = np.asarray(edges, dtype=float)
        idx = np.searchsorted(edges, samples, side="left") - 1
        ok = (idx >= 0) & (idx < len(edges) - 1)
        counts = np.bincount(idx[ok], minlength=len(edges) - 1).astype(np.int64)
        return cls(edges, counts, len(samples) if n is None else int(n))

    @property
    def mass(self):
        return self.counts / self.n if self.n else np.zeros(len(self.counts))

    @property
    def density(self):
        return self.mass / np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_rows(self):
        return np.column_stack([self.edges[:-1], self.edges[1:], self.mass])


def log_edges(lo, hi, base=1.25):
    k = int(np.ceil(np.log(hi / lo) / np.log(base) - 1e-12))
    return lo * base ** np.arange(k + 1)


class LogBinHistogram(Histogram):
    """Histogram with a first bin (0, xi_min] and geometric bins up to xi_max."""

    @classmethod
    def build(cls, samples, n, xi_min, xi_max, base=1.25):
        edges = np.concatenate([[0.0], log_edges(xi_min, xi_max, base)])
        return cls.from_samples(samples, edges, n)


def default_xi_edges(xi_T, linear_max=20.0, n_linear=40, base=1.25):
    """40 linear bins on [0, 20] then log bins up to xi_T."""
    lin = np.linspace(0.0, linear_max, n_linear + 1)
    if xi_T <= linear_max:
        return lin[lin <= xi_T + 1e-12] if xi_T < linear_max else lin
    return np.concatenate([lin, log_edges(linear_max, xi_T, base)[1:]])


def kernel_xi_edges(xi_T, base=1.25):
    """Finer grid used for kernel tables (steep small-xi structure)."""
    parts = [np.arange(0.0, 2.0, 0.05), np.arange(2.0, 6.0, 0.1), np.arange(6.0, 20.0, 0.25),
             [20.0]]
    e = np.concatenate(parts)
    if xi_T > 20.0:
        e = np.concatenate([e, log_edges(20.0, xi_T, base)[1:]])
    return e


@dataclass
class JointKernelHistogram:
    """Counts over (label j, xi bin, impact cell w, exit cell z); d = 2 only.

    counts[j - 1, a, p, r]; mass = counts / n.  Censored rays have no cell.
    """

    xi_edges: np.ndarray
    w_edges: np.ndarray
    z_edges: np.ndarray
    counts: np.ndarray
    n: int
    censored: int = 0

    @classmethod
    def build(cls, xi, labels, b, z, N, xi_edges, n_w=20, n_z=20):
        w_edges = np.linspace(-1.0, 1.0, n_w + 1)
        z_edges = np.linspace(-1.0, 1.0, n_z + 1)
        xi = np.asarray(xi, float)
        hit = np.isfinite(xi)
        n = len(xi)
        counts = np.zeros((N, len(xi_edges) - 1, n_w, n_z), np.int64)
        if hit.any():
            a = np.searchsorted(xi_edges, xi[hit], side="left") - 1
            p = np.clip(np.searchsorted(w_edges, b[hit], side="right") - 1, 0, n_w - 1)
            r = np.clip(np.searchsorted(z_edges, z[hit], side="right") - 1, 0, n_z - 1)
            j = labels[hit] - 1
            ok = (a >= 0) & (a < len(xi_edges) - 1)
            np.add.at(counts, (j[ok], a[ok], p[ok], r[ok]), 1)
        return cls(np.asarray(xi_edges, float), w_edges, z_edges, counts, n, int((~hit).sum()))

    @property
    def mass(self):
        return self.counts / self.n if self.n else self.counts.astype(float)

    def xi_survival(self):
        """S at every xi edge from the (w, z, j) marginal."""
        per = self.counts.sum(axis=(0, 2, 3))
        tail = np.concatenate([np.cumsum(per[::-1])[::-1], [0]])
        return (tail + self.censored) / self.n

    def merge(self, other: "JointKernelHistogram") -> "JointKernelHistogram":
        return JointKernelHistogram(self.xi_edges, self.w_edges, self.z_edges,
                                    self.counts + other.counts, self.n + other.n,
                                    self.censored + other.censored)

    def to_rows(self):
        j, a, p, r = np.nonzero(self.counts)
        m = self.counts[j, a, p, r] / self.n
        return np.column_stack([j + 1, self.xi_edges[a], self.xi_edges[a + 1], self.w_edges[p],
                                self.w_edges[p + 1], self.z_edges[r], self.z_edges[r + 1], m])


@dataclass
class FPLEnsemble:
    """Per-ray outputs of a run; censored rays carry xi = nan, label 0."""

    xi: np.ndarray
    labels: np.ndarray
    b: np.ndarray
    s: np.ndarray
    source: np.ndarray
    d: int
    N: int
    rho: float
    T: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.xi)

    @property
    def xi_T(self):
        return self.rho ** (self.d - 1) * self.T

    def survival(self) -> EmpiricalSurvival:
        return EmpiricalSurvival.from_xi(self.xi, self.xi_T)

    def density_histogram(self, edges=None) -> Histogram:
        edges = default_xi_edges(self.xi_T) if edges is None else edges
        return Histogram.from_samples(self.xi, edges, self.n)

    def kernel(self, xi_edges=None, n_w=20, n_z=20) -> JointKernelHistogram:
        if self.d != 2:
            raise NotImplementedError("kernel histograms are implemented for d = 2")
        xi_edges = default_xi_edges(self.xi_T) if xi_edges is None else xi_edges
        return JointKernelHistogram.build(self.xi, self.labels, self.b[:, 0], self.s[:, 0], self.N,
                                          xi_edges, n_w, n_z)


def _workers(workers):
    env = os.environ.get("LUL_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, int(workers or 1))


def simulate_fpl_ensemble(cfg: UnionConfiguration, launch: LaunchSpec, n: int, seed: int,
                          workers: int = 1, chunk: int = CHUNK) -> FPLEnsemble:
    """Free paths for n random directions (uniform on the sphere).

    Work is cut into fixed chunks, each with its own seed-derived stream, and
    merged in chunk order; the result does not depend on the worker count.
    """
    _check_generic_launch(cfg, launch)
    d = cfg.d
    sizes = [min(chunk, n - k) for k in range(0, n, chunk)]
    jobs = [(cfg, launch, seed, i, m) for i, m in enumerate(sizes)]
    nw = _workers(workers)
    if nw > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(nw) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    if parts:
        xi, lab, b, z, src = (np.concatenate(p) for p in zip(*parts))
    else:
        xi, lab = np.zeros(0), np.zeros(0, np.int64)
        b = z = np.zeros((0, d - 1))
        src = np.zeros(0, np.int64)
    return FPLEnsemble(xi, lab, b, z, src, d, cfg.N, launch.rho, launch.T,
                       {"launch": launch.describe(), "seed": seed, "chunk": chunk})


def poisson_fpl_ensemble(d: int, rho: float, n: int, seed: int, T: float = np.inf,
                         density: float = 1.0) -> np.ndarray:
    """Scaled free paths in fresh unit-density Poisson fields, one stream per ray."""
    from .geometry import Ray, poisson_first_collision

    out = np.empty(n)
    e = np.zeros(d)
    e[0] = 1.0
    for i in range(n):
        rng = rng_stream(seed, i)
        v = uniform_directions(rng, 1, d)[0]
        rec = poisson_first_collision(Ray(e * 0.0, v, rho, T), rng, density)
        out[i] = rec.tau * rho ** (d - 1) if rec.hit else np.nan
    return out


# ---------------------------------------------------------------- distances

def _points_and_eval(obj, pts):
    if isinstance(obj, EmpiricalSurvival):
        return obj(pts), obj.left_limit(pts)
    val = np.asarray(obj(pts), dtype=float)
    return val, val


def _support(obj):
    if isinstance(obj, EmpiricalSurvival):
        if obj.n == 0:
            raise EmptySample("empty sample")
        return obj.samples
    return np.asarray(obj.grid, dtype=float)


def ks_distance(a, b, lo: float = 0.0, hi: float = np.inf) -> float:
    """Sup-distance between two survival functions on [lo, hi].

    Arguments are EmpiricalSurvival objects or tables exposing ``grid`` and
    ``__call__``; empirical step functions are compared at both one-sided
    limits of every jump.
    """
    pts = np.union1d(_support(a), _support(b))
    pts = pts[(pts >= lo) & (pts <= hi)]
    pts = np.concatenate([pts, [lo]] + ([[hi]] if np.isfinite(hi) else []))
    ar, al = _points_and_eval(a, pts)
    br, bl = _points_and_eval(b, pts)
    inner = pts > lo  # left limits only count inside the window
    dl = np.abs(al - bl)[inner]
    return float(max(np.max(np.abs(ar - br)), dl.max() if dl.size else 0.0))


def dkw_epsilon(n: int, alpha: float = 0.01) -> float:
    """Half-width of the DKW band: P(sup|F_n - F| > eps) <= alpha."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


# ---------------------------------------------------------------- tail fits

@dataclass(frozen=True)
class TailFit:
    exponent: float
    amplitude: float
    stderr: float
    curvature: float  # change of the local log-log slope across the window
    nonlinear: bool
    points: int


def fit_tail_exponent(S, window, base: float = 1.25, curvature_threshold: float = 0.5) -> TailFit:
    """Least squares of log S against log xi on geometric midpoints in the window.

    Empirical survivals are weighted by their approximate inverse variance
    (n * S, Poisson counting); tables get equal weights.
    """
    x0, x1 = window
    edges = log_edges(x0, x1, base)
    x = np.sqrt(edges[1:] * edges[:-1])
    y = np.asarray(S(x), dtype=float)
    if isinstance(S, EmpiricalSurvival):
        wt = S.n * y
    else:
        wt = np.ones_like(y)
    keep = y > 0
    if keep.sum() < 5:
        raise InsufficientTail(f"only {int(keep.sum())} nonempty log bins in {window}")
    lx, ly, wt = np.log(x[keep]), np.log(y[keep]), wt[keep]
    X = np.column_stack([np.ones_like(lx), lx])
    W = wt / wt.sum()
    XtW = X.T * W
    coef = np.linalg.solve(XtW @ X, XtW @ ly)
    resid = ly - X @ coef
    dof = max(len(lx) - 2, 1)
    s2 = float((W * resid**2).sum() * len(lx) / dof)
    cov = np.linalg.inv(XtW @ X) * s2 / len(lx)
    stderr = float(math.sqrt(max(cov[1, 1], 0.0)))
    # quadratic term: local slope drifts by 2 c (log x1 - log x0)
    if len(lx) >= 4:
        X2 = np.column_stack([X, lx**2])
        c2 = np.linalg.lstsq(X2 * np.sqrt(W)[:, None], ly * np.sqrt(W), rcond=None)[0]
        curv = float(abs(2.0 * c2[2] * (lx[-1] - lx[0])))
    else:
        curv = 0.0
    return TailFit(float(coef[1]), float(math.exp(coef[0])), stderr, curv,
                   curv > curvature_threshold, int(len(lx)))


# ---------------------------------------------------------------- equidistribution

@njit(cache=True)
def _strip_counts_2d(A, L, W):
    """#{m in Z^2 \\ 0 : |(mA)_1| <= L, |(mA)_2| <= W}."""
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    inv00 = A[1, 1] / det
    inv10 = -A[1, 0] / det
    inv01 = -A[0, 1] / det
    inv11 = A[0, 0] / det
    # iterate over m_k, solve the other index from the two slab constraints
    if abs(A[1, 1]) >= abs(A[0, 1]):
        k = 0
        reach = L * abs(inv00) + W * abs(inv10)
    else:
        k = 1
        reach = L * abs(inv01) + W * abs(inv11)
    o = 1 - k
    total = 0
    mk_lo = int(math.ceil(-reach - 1e-9))
    mk_hi = int(math.floor(reach + 1e-9))
    for mk in range(mk_lo, mk_hi + 1):
        lo = -1e300
        hi = 1e300
        for col in range(2):
            bound = L if col == 0 else W
            a = mk * A[k, col]
            c = A[o, col]
            if c == 0.0:
                if abs(a) > bound:
                    lo = 1.0
                    hi = 0.0
                continue
            t1 = (-bound - a) / c
            t2 = (bound - a) / c
            if t1 > t2:
                t1, t2 = t2, t1
            lo = max(lo, t1)
            hi = min(hi, t2)
        if hi >= lo:
            cnt = int(math.floor(hi)) - int(math.ceil(lo)) + 1
            if cnt > 0:
                total += cnt
                if mk == 0 and math.ceil(lo) <= 0 <= math.floor(hi):
                    total -= 1  # origin
    return total


def _exact_corr(x, y) -> float:
    x = [int(a) for a in x]
    y = [int(a) for a in y]
    n = len(x)
    sx, sy = sum(x), sum(y)
    cov = n * sum(a * b for a, b in zip(x, y)) - sx * sy
    vx = n * sum(a * a for a in x) - sx * sx
    vy = n * sum(b * b for b in y) - sy * sy
    if vx == 0 or vy == 0:
        return float("nan")
    r2 = Fraction(cov * cov, vx * vy)
    return math.copysign(math.sqrt(r2), cov)


def _factorization_test(x, y):
    """Chi-square of the joint count table against the product of marginals."""
    def cats(a, min_frac=0.02):
        vals, cnt = np.unique(a, return_counts=True)
        top = vals[-1]
        # merge the upper tail until each category is populated
        for v in vals:
            if (a >= v).mean() < min_frac:
                top = v
                break
        return np.minimum(a, top)
    cx, cy = cats(np.asarray(x)), cats(np.asarray(y))
    ux, ix = np.unique(cx, return_inverse=True)
    uy, iy = np.unique(cy, return_inverse=True)
    if len(ux) < 2 or len(uy) < 2:
        return float("nan"), 0, float("nan")
    table = np.zeros((len(ux), len(uy)), np.int64)
    np.add.at(table, (ix, iy), 1)
    res = sps.chi2_contingency(table, correction=False)
    return float(res[0]), int(res[2]), float(res[1])


def independence_diagnostic(matrices, t: float, n: int, seed: int, box=1.0) -> dict:
    """Counts X_i(v) = #(Z^2 M_i K(v) Phi^t cap box \\ {0}) for uniform v (d = 2).

    Phi^t = diag(e^{-t}, e^t); ``box`` is the half-width of the square [-box, box]^2.
    Returns means, the pairwise correlation matrix and chi-square factorization
    statistics for every pair.
    """
    mats = [np.asarray(M, dtype=float) for M in matrices]
    if any(M.shape != (2, 2) for M in mats):
        raise NotImplementedError("independence diagnostic is implemented for d = 2")
    rng = rng_stream(seed, 0)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    L = box * math.exp(t)
    W = box * math.exp(-t)
    X = np.zeros((len(mats), n), np.int64)
    for k in range(n):
        a, b = math.cos(theta[k]), math.sin(theta[k])
        K = np.array([[a, -b], [b, a]])
        for i, M in enumerate(mats):
            X[i, k] = _strip_counts_2d(M @ K, L, W)
    vol = (2.0 * box) ** 2
    means = X.mean(axis=1)
    se = X.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.full(len(mats), np.inf)
    corr = np.eye(len(mats))
    chi = {}
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            corr[i, j] = corr[j, i] = _exact_corr(X[i], X[j])
            chi[(i + 1, j + 1)] = dict(zip(("statistic", "dof", "pvalue"), _factorization_test(X[i], X[j])))
    pre = bool(np.any(np.abs(means - vol) > 3.0 * se))
    return {"counts": X, "means": means, "stderr": se, "box_volume": vol, "corr": corr,
            "chi2": chi, "pre_asymptotic": pre, "t": t, "n": n}
