"""Ray/scatterer geometry: first collisions, sphere frames, reflection.

Row-vector convention throughout: ``v @ K(v) == e_1``.  For a vector x the
"perpendicular part" in the frame of v is ``(x @ K(v))[1:]``; in d = 2 this is
the cross product ``v_x x_y - v_y x_x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from ._march import LAUNCH_CUTOFF, TIE_TOL, march_batch, marcher_arrays
from .config import UnionConfiguration

__all__ = [
    "Ray",
    "CollisionRecord",
    "LaunchInsideScatterer",
    "rotation_K",
    "perp_in_frame",
    "exit_parameter",
    "reflect_hard_sphere",
    "first_collision",
    "first_collision_bruteforce",
    "poisson_first_collision",
    "poisson_tube_centers",
    "unit_ball_volume",
    "sphere_point_from_exit",
]


class LaunchInsideScatterer(ValueError):
    pass


def unit_ball_volume(k: int) -> float:
    """Volume of the unit ball in R^k (sigma-bar for k = d - 1)."""
    return float(np.pi ** (k / 2) / gamma(k / 2 + 1))


def rotation_K(v) -> np.ndarray:
    """K in SO(d) with v K = e_1.

    Householder reflection taking v to -e_1 followed by flipping the first
    coordinate; smooth away from v = -e_1, where the branch is fixed to a
    half-turn in the (1, 2)-plane.
    """
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    u = v.copy()
    u[0] += 1.0
    uu = u @ u
    if uu < 1e-24:
        K = np.eye(d)
        K[0, 0] = K[1, 1] = -1.0
        return K
    K = np.eye(d) - 2.0 * np.outer(u, u) / uu
    K[:, 0] *= -1.0
    return K


def perp_in_frame(x, v) -> np.ndarray:
    """(x K(v))_perp for batches: x, v of shape (n, d); returns (n, d-1)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    d = v.shape[1]
    if d == 2:
        return (v[:, 0] * x[:, 1] - v[:, 1] * x[:, 0])[:, None]
    u = v.copy()
    u[:, 0] += 1.0
    uu = np.einsum("ij,ij->i", u, u)
    safe = uu > 1e-24
    coef = np.where(safe, 2.0 * np.einsum("ij,ij->i", x, u) / np.where(safe, uu, 1.0), 0.0)
    out = (x - coef[:, None] * u)[:, 1:]
    # branch at v = -e1: K = diag(-1, -1, 1, ...)
    if not np.all(safe):
        bad = ~safe
        out[bad] = x[bad, 1:]
        out[bad, 0] = -x[bad, 1]
    return out


def _from_frame(a, v) -> np.ndarray:
    """x with x K(v) = a, batched (inverse of the frame map)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    d = v.shape[1]
    b = a.copy()
    b[:, 0] *= -1.0
    u = v.copy()
    u[:, 0] += 1.0
    uu = np.einsum("ij,ij->i", u, u)
    safe = uu > 1e-24
    coef = np.where(safe, 2.0 * np.einsum("ij,ij->i", b, u) / np.where(safe, uu, 1.0), 0.0)
    out = b - coef[:, None] * u
    if not np.all(safe):
        bad = ~safe
        out[bad] = a[bad]
        out[bad, 0] = -a[bad, 0]
        out[bad, 1] = -a[bad, 1]
    del d
    return out


def sphere_point_from_exit(z, v) -> np.ndarray:
    """Point beta on the unit sphere with (beta K(v))_perp = z on the forward side.

    The ray beta + t v (t >= 0) then stays outside the open unit ball.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    first = np.sqrt(np.clip(1.0 - np.sum(z * z, axis=1), 0.0, None))
    return _from_frame(np.column_stack([first, z]), v)


def exit_parameter(beta, v) -> np.ndarray:
    """s(v) = (beta(v) K(v))_perp as a (d-1)-vector."""
    return perp_in_frame(beta, v)[0]


def reflect_hard_sphere(v, w) -> np.ndarray:
    """Elastic reflection v+ = v - 2 (v.w) w; works on single vectors or batches."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    dot = np.sum(v * w, axis=-1, keepdims=True)
    return v - 2.0 * dot * w


@dataclass(frozen=True, eq=False)
class Ray:
    """Launch data (q + rho beta(v), v) with horizon T (length units)."""

    q: np.ndarray
    v: np.ndarray
    rho: float
    T: float
    beta: np.ndarray | None = None  # beta(v), unscaled; None means 0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        v = np.asarray(self.v, dtype=float)
        beta = np.zeros_like(q) if self.beta is None else np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "beta", beta)
        if abs(np.linalg.norm(v) - 1.0) > 1e-14:
            raise ValueError("direction must be a unit vector")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        bv = beta @ v
        closest = np.linalg.norm(beta) if bv >= 0 else np.linalg.norm(beta - bv * v)
        if np.any(beta) and closest < 1.0 - 1e-12:
            raise LaunchInsideScatterer("beta(v) + t v enters the unit ball")

    @property
    def launch(self) -> np.ndarray:
        return self.q + self.rho * self.beta

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True, eq=False)
class CollisionRecord:
    status: str  # "hit" | "horizon_exceeded"
    tau: float = np.nan
    h: int = -1  # 1-based lattice label, 0 for Poisson scatterers
    y: np.ndarray | None = None
    w: np.ndarray | None = None
    b: np.ndarray | None = None
    s: np.ndarray | None = None
    m: np.ndarray | None = None

    @property
    def hit(self) -> bool:
        return self.status == "hit"


def _record(ray: Ray, t: float, h: int, y, m=None) -> CollisionRecord:
    s = exit_parameter(ray.beta, ray.v)
    if h < 0:
        return CollisionRecord("horizon_exceeded", s=s)
    rel = ray.launch - y
    tc = -(rel @ ray.v)
    perp = -rel - tc * ray.v
    hh = np.sqrt(max(ray.rho**2 - perp @ perp, 0.0))
    w = (-perp - hh * ray.v) / ray.rho
    b = perp_in_frame(w, ray.v)[0]
    return CollisionRecord("hit", float(t), int(h), np.asarray(y, float), w, b, s,
                           None if m is None else np.asarray(m))


def _check_launch_outside(cfg: UnionConfiguration, ray: Ray):
    from .config import lattice_points_in_ball

    for lat in cfg.lattices:
        pts = lattice_points_in_ball(lat, ray.launch, ray.rho)
        if len(pts) and np.min(np.linalg.norm(pts - ray.launch, axis=1)) < ray.rho * (1 - 1e-9):
            raise LaunchInsideScatterer(f"launch point lies inside a scatterer of lattice {lat.label}")


def first_collision(cfg: UnionConfiguration, ray: Ray, check_launch: bool = True) -> CollisionRecord:
    """First entry of the ray into a scatterer of the union (segment march)."""
    if check_launch and not np.any(ray.beta):
        _check_launch_outside(cfg, ray)
    bases, invs, omegas, sbound, delta = marcher_arrays(cfg)
    t, h, M, Y = march_batch(ray.launch[None, :], ray.v[None, :], float(ray.rho), float(ray.T),
                             bases, invs, omegas, sbound, delta)
    if h[0] < 0:
        return _record(ray, np.nan, -1, None)
    return _record(ray, t[0], cfg.lattices[h[0]].label, Y[0], M[0])


def lattice_points_naive(lat, center, r):
    """Enumerate a generous box (Frobenius-norm bound) and filter by distance."""
    center = np.asarray(center, dtype=float)
    Binv = lat.inverse_basis
    s = np.sqrt(np.sum(Binv * Binv))
    x = center @ Binv - lat.omega
    half = int(np.ceil(r * s)) + 1
    c = np.round(x).astype(np.int64)
    axes = [np.arange(c[k] - half, c[k] + half + 1) for k in range(lat.dim)]
    m = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    y = (m + lat.omega) @ lat.basis
    keep = np.sum((y - center) ** 2, axis=1) <= r * r
    return y[keep], m[keep]


def first_collision_bruteforce(cfg: UnionConfiguration, ray: Ray) -> CollisionRecord:
    """Oracle: every centre within T + rho of the launch point, direct minimum."""
    q, v, rho = ray.launch, ray.v, ray.rho
    ts, hs, ys, ms = [], [], [], []
    for lat in cfg.lattices:
        y, m = lattice_points_naive(lat, q, ray.T + rho)
        if not len(y):
            continue
        diff = y - q
        tc = diff @ v
        perp2 = np.sum((diff - tc[:, None] * v) ** 2, axis=1)
        ok = perp2 < rho * rho
        t = np.full(len(y), np.inf)
        t[ok] = tc[ok] - np.sqrt(rho * rho - perp2[ok])
        ok &= (t > LAUNCH_CUTOFF) & (t <= ray.T)
        ts.append(t[ok])
        hs.append(np.full(ok.sum(), lat.label))
        ys.append(y[ok])
        ms.append(m[ok])
    if not ts or sum(len(t) for t in ts) == 0:
        return _record(ray, np.nan, -1, None)
    t = np.concatenate(ts)
    h = np.concatenate(hs)
    y = np.concatenate(ys)
    m = np.concatenate(ms)
    tmin = t.min()
    tied = np.flatnonzero(t <= tmin + TIE_TOL)
    k = tied[np.lexsort((t[tied], h[tied]))[0]]
    return _record(ray, t[k], int(h[k]), y[k], m[k])


def _perp_basis(v) -> np.ndarray:
    """Rows spanning v-perp: the columns 2..d of K(v)."""
    return rotation_K(v)[:, 1:].T


def poisson_tube_centers(rng: np.random.Generator, q, v, radius: float, length: float,
                         density: float = 1.0):
    """Poisson centres in the tube {q + t v + p : 0 <= t < length, |p| < radius, p perp v}.

    Returns (t_c, offsets) with offsets in the K(v) frame coordinates 2..d.
    """
    d = len(q)
    vol = unit_ball_volume(d - 1) * radius ** (d - 1) * length
    n = rng.poisson(density * vol)
    tc = np.sort(rng.uniform(0.0, length, n))
    return tc, _ball_offsets(rng, n, d - 1, radius)


def _ball_offsets(rng, n, k, radius):
    g = rng.standard_normal((n, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / k)
    return g * r[:, None]


def poisson_first_collision(ray: Ray, rng: np.random.Generator, density: float = 1.0,
                            ) -> CollisionRecord:
    """First collision with a fresh Poisson scatterer field, drawn lazily along the ray.

    Centres are generated in order of their projection onto the ray (exponential
    gaps at rate density * sigma_bar * rho^(d-1)); only centres whose ball meets
    the ray matter.  The field is conditioned to leave the launch point outside
    every scatterer.
    """
    q, v, rho = ray.launch, ray.v, ray.rho
    d = len(q)
    rate = density * unit_ball_volume(d - 1) * rho ** (d - 1)
    E = _perp_basis(v)
    best_t = np.inf
    best = None
    tc = 0.0
    while True:
        tc += rng.exponential(1.0 / rate)
        if tc - rho > min(best_t, ray.T):
            break
        off = _ball_offsets(rng, 1, d - 1, rho)[0]
        r2 = off @ off
        if tc * tc + r2 < rho * rho:
            continue  # would cover the launch point; excluded by conditioning
        ts = tc - np.sqrt(rho * rho - r2)
        if LAUNCH_CUTOFF < ts <= ray.T and ts < best_t:
            best_t = ts
            best = q + tc * v + off @ E
    if best is None:
        return _record(ray, np.nan, -1, None)
    return _record(ray, best_t, 0, best)
