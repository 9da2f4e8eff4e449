"""Compiled segment marcher for first collisions with a union of lattices."""
import numpy as np
from numba import njit

LAUNCH_CUTOFF = 1e-15
TIE_TOL = 1e-12


@njit(cache=True)
def _better(t, h, best_t, best_h):
    if best_h < 0:
        return True
    if t < best_t - TIE_TOL:
        return True
    if abs(t - best_t) <= TIE_TOL:
        if h < best_h:
            return True
        if h == best_h and t < best_t:
            return True
    return False


@njit(cache=True)
def march_one(q, v, rho, T, bases, invs, omegas, sbound, delta, m_out, y_out):
    """First entry time of the ray q + t v into the union of balls.

    Returns (t, h) with h the 0-based lattice index, or (inf, -1) if no
    scatterer is entered for t <= T.  The hit centre's integer coordinates
    and position are written into m_out / y_out.
    """
    N = omegas.shape[0]
    d = omegas.shape[1]
    rho2 = rho * rho
    best_t = np.inf
    best_h = -1
    p = np.empty(d)
    x = np.empty(d)
    lo = np.empty(d, np.int64)
    hi = np.empty(d, np.int64)
    m = np.empty(d, np.int64)
    y = np.empty(d)
    t0 = 0.0
    while t0 < T:
        t1 = min(t0 + delta, T)
        tm = 0.5 * (t0 + t1)
        R = 0.5 * (t1 - t0) + rho
        for k in range(d):
            p[k] = q[k] + tm * v[k]
        for i in range(N):
            B = bases[i]
            Binv = invs[i]
            w = R * sbound[i]
            empty = False
            for k in range(d):
                acc = 0.0
                for l in range(d):
                    acc += p[l] * Binv[l, k]
                x[k] = acc - omegas[i, k]
                lo[k] = np.int64(np.ceil(x[k] - w))
                hi[k] = np.int64(np.floor(x[k] + w))
                if hi[k] < lo[k]:
                    empty = True
            if empty:
                continue
            for k in range(d):
                m[k] = lo[k]
            while True:
                # candidate centre
                tc = 0.0
                for k in range(d):
                    acc = 0.0
                    for l in range(d):
                        acc += (m[l] + omegas[i, l]) * B[l, k]
                    y[k] = acc
                    tc += (acc - q[k]) * v[k]
                if tc + rho > 0.0:
                    perp2 = 0.0
                    for k in range(d):
                        e = (y[k] - q[k]) - tc * v[k]
                        perp2 += e * e
                    if perp2 < rho2:
                        ts = tc - np.sqrt(rho2 - perp2)
                        if ts > LAUNCH_CUTOFF and ts <= T:
                            if _better(ts, i, best_t, best_h):
                                best_t = ts
                                best_h = i
                                for k in range(d):
                                    m_out[k] = m[k]
                                    y_out[k] = y[k]
                # odometer
                k = 0
                while k < d:
                    m[k] += 1
                    if m[k] <= hi[k]:
                        break
                    m[k] = lo[k]
                    k += 1
                if k == d:
                    break
        if best_h >= 0 and best_t <= t1:
            break
        t0 = t1
    return best_t, best_h


@njit(cache=True)
def march_batch(Q, V, rho, T, bases, invs, omegas, sbound, delta):
    n = Q.shape[0]
    d = Q.shape[1]
    t = np.empty(n)
    h = np.empty(n, np.int64)
    M = np.zeros((n, d), np.int64)
    Y = np.zeros((n, d))
    m_out = np.zeros(d, np.int64)
    y_out = np.zeros(d)
    for r in range(n):
        tr, hr = march_one(Q[r], V[r], rho, T, bases, invs, omegas, sbound, delta, m_out, y_out)
        t[r] = tr
        h[r] = hr
        if hr >= 0:
            for k in range(d):
                M[r, k] = m_out[k]
                Y[r, k] = y_out[k]
    return t, h, M, Y


def marcher_arrays(cfg):
    """Arrays and segment length for ``march_batch`` from a configuration."""
    bases, invs, omegas = cfg.arrays()
    sbound = np.array([np.linalg.norm(Binv, 2) for Binv in invs])
    delta = max(1.0, max(lat.scale for lat in cfg.lattices))
    return (np.ascontiguousarray(bases), np.ascontiguousarray(invs),
            np.ascontiguousarray(omegas), sbound, float(delta))
