import numpy as np
import pytest

from lorentz_union.flight import (DegenerateKernel, EmptyKernelRow, KernelFamily, collide,
                                  init_flight, observe_at, run_flight)
from lorentz_union.laws import SingleLatticeKernel, launch_from_lattice_density
from lorentz_union.stats import LaunchSpec, kernel_xi_edges, simulate_fpl_ensemble


@pytest.fixture(scope="module")
def single(z2):
    run = simulate_fpl_ensemble(z2, LaunchSpec("lattice", 0.01, 2e3), 40_000, 9)
    return SingleLatticeKernel.from_histogram(run.kernel(kernel_xi_edges(run.xi_T), n_w=10, n_z=10))


@pytest.fixture(scope="module")
def fam2(single):
    return KernelFamily.from_tables(launch_from_lattice_density(single, [0.5, 0.5])[1])


def toy(N=1, A=3, P=2, R=2, jitter=True):
    E = np.linspace(0, 3, A + 1)
    trans = np.ones((N, R, N, A, P))
    trans /= trans.sum(axis=(2, 3, 4), keepdims=True)
    stat = np.ones((N, A, P)) / (N * A * P)
    return KernelFamily(E, np.linspace(-1, 1, P + 1), np.linspace(-1, 1, R + 1), np.ones(N) / N,
                        trans, np.zeros((N, R)), stat, 0.0, jitter)


def test_degenerate_stationary_kernel():
    k = toy()
    with pytest.raises(DegenerateKernel):
        KernelFamily(k.E, k.w_edges, k.z_edges, k.nbar, k.trans, k.trans_over,
                     np.zeros_like(k.stat), 0.0)


def test_point_mass_kernel_without_jitter():
    k = toy(A=1, P=1, R=1, jitter=False)
    run = run_flight(k, 5, seed=0, chains=3)
    # one xi cell (0, 3], one w cell: midpoints
    assert np.all(run.xi == 1.5)
    assert np.allclose(run.final.w, 0.0)


def test_single_lattice_labels(single):
    k = KernelFamily.from_tables(launch_from_lattice_density(single, [1.0])[1])
    run = run_flight(k, 50, seed=1, chains=20)
    assert np.all(run.labels == 1)


def test_two_lattice_labels_balanced(fam2):
    run = run_flight(fam2, 300, seed=2, chains=200)
    C = run.transition_counts(burn_in=50)
    frac = C.sum(axis=1) / C.sum()
    assert np.allclose(frac, 0.5, atol=0.02)


def test_zero_steps(fam2):
    run = run_flight(fam2, 0, seed=3, chains=4)
    assert run.xi.shape == (0, 4)
    assert run.labels.shape == (1, 4)
    assert run.traj.shape == (1, 7)


def test_empty_row_raises():
    k = toy(R=2)
    trans = k.trans.copy()
    trans[0, 1] = 0.0
    bad = KernelFamily(k.E, k.w_edges, k.z_edges, k.nbar, trans, k.trans_over, k.stat, 0.0)
    rng = np.random.default_rng(0)
    with pytest.raises(EmptyKernelRow) as e:
        bad.sample_transition(np.array([0, 0]), np.array([-0.5, 0.5]), rng)
    assert e.value.row == 1 and e.value.cell == 1


def test_deterministic(fam2):
    a = run_flight(fam2, 40, seed=5, chains=1500)
    b = run_flight(fam2, 40, seed=5, chains=1500)
    assert np.array_equal(a.xi, b.xi) and np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.traj, b.traj)
    c = run_flight(fam2, 40, seed=6, chains=1500)
    assert not np.array_equal(a.xi, c.xi)


def test_collide_is_reflection():
    rng = np.random.default_rng(0)
    th = rng.uniform(0, 2 * np.pi, 500)
    V = np.column_stack([np.cos(th), np.sin(th)])
    b = rng.uniform(-1, 1, 500)
    Vp, s = collide(V, b)
    assert np.allclose(np.linalg.norm(Vp, axis=1), 1.0)
    assert np.allclose(s, b, atol=1e-10)
    # head-on: reverse
    Vp0, _ = collide(V[:1], np.zeros(1))
    assert np.allclose(Vp0, -V[:1])


def test_trajectory_consistent(fam2):
    run = run_flight(fam2, 30, seed=7, chains=1)
    step, j, xi, vx, vy, qx, qy = run.traj.T
    dq = np.diff(np.column_stack([qx, qy]), axis=0)
    assert np.allclose(np.linalg.norm(dq, axis=1), xi[:-1])
    assert np.allclose(np.hypot(vx, vy), 1.0)
    assert np.array_equal(j, run.labels[:, 0])


def test_observe_at_residuals_positive(fam2):
    xi0, j0, resid, j1, steps = observe_at(fam2, 5.0, 500, seed=8)
    assert np.all(resid > 0) and np.all(steps >= 0)
    assert set(np.unique(j1)) <= {1, 2}


def test_init_flight_direction(fam2):
    st = init_flight(fam2, V=[0.0, 1.0], rng=np.random.default_rng(0), chains=3)
    assert np.allclose(st.V, [[0.0, 1.0]] * 3)
