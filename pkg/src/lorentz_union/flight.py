"""Random flight chain driven by tabulated transition kernels (d = 2)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import perp_in_frame, reflect_hard_sphere, _from_frame
from .laws import UnionKernelTables
from .stats import rng_stream

__all__ = [
    "DegenerateKernel",
    "EmptyKernelRow",
    "KernelFamily",
    "FlightState",
    "FlightRun",
    "init_flight",
    "step_flight",
    "run_flight",
    "observe_at",
]

BLOCK = 1024  # chains per random stream


class DegenerateKernel(ValueError):
    pass


class EmptyKernelRow(ValueError):
    def __init__(self, row, cell):
        super().__init__(f"kernel row for lattice {row} has no mass in exit cell {cell}")
        self.row, self.cell = row, cell


class _Sampler:
    """Inverse-CDF sampling from many discrete rows at once.

    Rows are stacked with offsets so one ``searchsorted`` serves all chains.
    """

    def __init__(self, masses):
        m = np.asarray(masses, dtype=float)
        tot = m.sum(axis=1)
        self.empty = tot <= 0
        safe = np.where(self.empty, 1.0, tot)
        cdf = np.cumsum(m, axis=1) / safe[:, None]
        cdf[:, -1] = 1.0
        self.K = m.shape[1]
        self.flat = (cdf + np.arange(m.shape[0])[:, None]).ravel()
        self.totals = tot

    def __call__(self, rows, u):
        idx = np.searchsorted(self.flat, rows + u, side="right")
        return np.minimum(idx - rows * self.K, self.K - 1)


@dataclass
class KernelFamily:
    """Sampling tables for the chain.

    Row (i, r) holds the cells (j, a, p) of the composed kernel for a launch
    from lattice i with exit cell r, plus one overflow entry (xi > E[-1]).
    """

    E: np.ndarray
    w_edges: np.ndarray
    z_edges: np.ndarray
    nbar: np.ndarray
    trans: np.ndarray  # (N, R, N, A, P)
    trans_over: np.ndarray  # (N, R)
    stat: np.ndarray  # (N, A, P)
    stat_over: float
    jitter: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N, R, _, A, P = self.trans.shape
        self.N, self.R, self.A, self.P = N, R, A, P
        rows = np.concatenate([self.trans.reshape(N * R, -1), self.trans_over.reshape(N * R, 1)], axis=1)
        self._rows = _Sampler(rows)
        st = np.concatenate([self.stat.ravel(), [self.stat_over]])
        if st.sum() <= 0:
            raise DegenerateKernel("stationary kernel has no mass")
        self._stat = _Sampler(st[None, :])
        # label law for overflow draws: mass of each target in the last xi bin
        last = self.trans[:, :, :, -1, :].sum(axis=-1) + 1e-300
        self._over_j = last / last.sum(axis=-1, keepdims=True)

    @classmethod
    def from_tables(cls, tables: UnionKernelTables, jitter: bool = True) -> "KernelFamily":
        return cls(tables.E, tables.w_edges, tables.z_edges, tables.nbar, tables.trans,
                   tables.trans_over, tables.stat, tables.stat_over, jitter)

    def normalization(self):
        return self.trans.sum(axis=(2, 3, 4)) + self.trans_over

    # cell -> continuous values ------------------------------------------
    def _xi_in(self, a, rng):
        lo, hi = self.E[a], self.E[a + 1]
        return lo + (hi - lo) * (rng.random(len(a)) if self.jitter else 0.5)

    def _w_in(self, p, rng):
        lo, hi = self.w_edges[p], self.w_edges[p + 1]
        return lo + (hi - lo) * (rng.random(len(p)) if self.jitter else 0.5)

    def _overflow_xi(self, n, rng):
        # survival ~ xi^-(N+1) beyond the grid
        return self.E[-1] * rng.random(n) ** (-1.0 / (self.N + 1))

    def _decode(self, flat, rng, over_rows=None):
        """flat index -> (j, xi, w); overflow handled separately."""
        over = flat == self.N * self.A * self.P
        idx = np.where(over, 0, flat)
        j, a, p = np.unravel_index(idx, (self.N, self.A, self.P))
        xi = self._xi_in(a, rng)
        w = self._w_in(p, rng)
        if over.any():
            k = int(over.sum())
            xi[over] = self._overflow_xi(k, rng)
            w[over] = rng.uniform(-1.0, 1.0, k)
            if over_rows is None:
                probs = np.broadcast_to(self.nbar / self.nbar.sum(), (k, self.N))
            else:
                probs = self._over_j.reshape(self.N * self.R, self.N)[over_rows[over]]
            cum = np.cumsum(probs, axis=1)
            j[over] = np.minimum((rng.random(k)[:, None] > cum).sum(axis=1), self.N - 1)
        return j, xi, w

    def sample_stationary(self, n, rng):
        flat = self._stat(np.zeros(n, np.int64), rng.random(n))
        return self._decode(flat, rng)

    def sample_transition(self, i, z, rng):
        """Next (j, xi, w) for sources i (0-based) with exit parameters z."""
        r = np.clip(np.searchsorted(self.z_edges, z, side="right") - 1, 0, self.R - 1)
        rows = i * self.R + r
        if np.any(self._rows.empty[rows]):
            bad = rows[self._rows.empty[rows]][0]
            raise EmptyKernelRow(bad // self.R + 1, bad % self.R)
        flat = self._rows(rows, rng.random(len(rows)))
        return self._decode(flat, rng, rows)


@dataclass
class FlightState:
    """Chains in parallel; labels are 0-based internally."""

    Q: np.ndarray
    V: np.ndarray
    V0: np.ndarray
    j: np.ndarray
    xi: np.ndarray  # time to the next hit
    w: np.ndarray  # impact parameter of the next hit
    t: np.ndarray

    @property
    def labels(self):
        return self.j + 1


def init_flight(kernels: KernelFamily, V=None, rng=None, chains: int = 1) -> FlightState:
    """Draw (j, xi, w) from the stationary law Phi^(j)(xi, w)."""
    rng = np.random.default_rng() if rng is None else rng
    if V is None:
        th = rng.uniform(0.0, 2.0 * np.pi, chains)
        V = np.column_stack([np.cos(th), np.sin(th)])
    else:
        V = np.broadcast_to(np.asarray(V, float), (chains, 2)).copy()
    j, xi, w = kernels.sample_stationary(chains, rng)
    return FlightState(np.zeros((chains, 2)), V, V.copy(), j, xi, w, np.zeros(chains))


def collide(V, b):
    """Reflect V off a unit sphere hit with impact parameter b; also return the exit parameter."""
    a = np.column_stack([-np.sqrt(np.clip(1.0 - b * b, 0.0, None)), b])
    w1 = _from_frame(a, V)
    Vp = reflect_hard_sphere(V, w1)
    Vp /= np.linalg.norm(Vp, axis=1, keepdims=True)
    s = perp_in_frame(w1, Vp)[:, 0]
    return Vp, s


def step_flight(state: FlightState, kernels: KernelFamily, rng, active=None) -> np.ndarray:
    """Fly to the pending hit, reflect, draw the next flight; returns the new xi values.

    ``active`` masks the chains that move (others are left untouched).
    """
    m = np.ones(len(state.j), bool) if active is None else active
    V, xi = state.V[m], state.xi[m]
    state.Q[m] += xi[:, None] * V
    state.t[m] += xi
    Vp, s = collide(V, state.w[m])
    j, xi_new, w_new = kernels.sample_transition(state.j[m], s, rng)
    state.V0[m] = V
    state.V[m] = Vp
    state.j[m] = j
    state.xi[m] = xi_new
    state.w[m] = w_new
    return xi_new


@dataclass
class FlightRun:
    xi: np.ndarray  # (steps, chains) consecutive-collision flight lengths
    labels: np.ndarray  # (steps + 1, chains), 1-based; row 0 is the first target
    init_xi: np.ndarray  # stationary residuals at t = 0
    traj: np.ndarray  # (steps + 1, 7) rows for chain 0: step, j, xi, Vx, Vy, Qx, Qy
    final: FlightState

    def transition_counts(self, burn_in: int = 0) -> np.ndarray:
        L = self.labels[burn_in:]
        N = int(self.labels.max()) if self.labels.size else 0
        C = np.zeros((N, N), np.int64)
        np.add.at(C, (L[:-1].ravel() - 1, L[1:].ravel() - 1), 1)
        return C


def run_flight(kernels: KernelFamily, steps: int, seed: int, chains: int = 1, V=None) -> FlightRun:
    """Independent chains in blocks of ``BLOCK``, one random stream per block."""
    xs, ls, inits, finals, traj = [], [], [], [], None
    for blk, start in enumerate(range(0, max(chains, 1), BLOCK)):
        n = min(BLOCK, chains - start)
        if n <= 0:
            break
        rng = rng_stream(seed, blk)
        st = init_flight(kernels, V, rng, n)
        inits.append(st.xi.copy())
        X = np.empty((steps, n))
        Lb = np.empty((steps + 1, n), np.int64)
        Lb[0] = st.labels
        rows = [(0, st.labels[0], st.xi[0], *st.V[0], *st.Q[0])] if blk == 0 else None
        for k in range(steps):
            X[k] = step_flight(st, kernels, rng)
            Lb[k + 1] = st.labels
            if rows is not None:
                rows.append((k + 1, st.labels[0], st.xi[0], *st.V[0], *st.Q[0]))
        if rows is not None:
            traj = np.array(rows, dtype=float)
        xs.append(X)
        ls.append(Lb)
        finals.append(st)
    if not xs:
        return FlightRun(np.zeros((steps, 0)), np.zeros((steps + 1, 0), np.int64), np.zeros(0),
                         np.zeros((0, 7)), None)
    return FlightRun(np.concatenate(xs, axis=1), np.concatenate(ls, axis=1), np.concatenate(inits),
                     traj, finals[0] if len(finals) == 1 else None)


def observe_at(kernels: KernelFamily, t_obs: float, chains: int, seed: int, max_steps: int = 10**6):
    """Residual time to the next hit and its label at time t_obs, for stationary starts.

    Returns (initial residual, initial label, residual at t_obs, label at t_obs, steps taken).
    """
    rng = rng_stream(seed, 0)
    st = init_flight(kernels, None, rng, chains)
    xi0, j0 = st.xi.copy(), st.labels.copy()
    steps = np.zeros(chains, np.int64)
    for _ in range(max_steps):
        active = st.t + st.xi <= t_obs
        if not active.any():
            break
        step_flight(st, kernels, rng, active)
        steps[active] += 1
    resid = st.t + st.xi - t_obs
    return xi0, j0, resid, st.labels.copy(), steps
