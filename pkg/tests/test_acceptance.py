"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Heavy ensembles come from session fixtures in conftest.py.  Run with
``pytest tests/test_acceptance.py -v`` (about ten minutes on one core).
"""
import json
import math
import time

import numpy as np
import pytest

from lorentz_union.config import build_example_family
from lorentz_union.exact import Base
from lorentz_union.flight import KernelFamily, observe_at, run_flight
from lorentz_union.geometry import LaunchInsideScatterer, Ray, first_collision, first_collision_bruteforce
from lorentz_union.laws import (SurvivalTable, compose_union_survival, consecutive_from_generic,
                                density_at_zero, exponential_survival, generic_point_density,
                                tail_constants)
from lorentz_union.stats import (EmpiricalSurvival, fit_tail_exponent, independence_diagnostic,
                                 ks_distance, poisson_fpl_ensemble)

PI = math.pi
N_SMALL = 100_000


def _small_xi_density(S: EmpiricalSurvival, h=0.1):
    g = np.linspace(0.0, h, 201)
    return density_at_zero(g, S(g), h)


def test_01_geometry_oracle(acceptance):
    fam2 = build_example_family(2, 2, Base.radical(2, 2))
    fam3 = build_example_family(2, 3, Base.radical(2, 3))
    rng = np.random.default_rng(2024)
    cases = [(fam2, 2, 0.05, 50.0)] * 7000 + [(fam3, 3, 0.15, 12.0)] * 3000
    worst, bad, done = 0.0, 0, 0
    start = time.time()
    for cfg, d, rho, T in cases:
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        ray = Ray(rng.uniform(-5, 5, d), v, rho, T)
        try:
            a = first_collision(cfg, ray)
        except LaunchInsideScatterer:
            q = ray.q + 0.37  # shift out of the scatterer, keep the instance count
            ray = Ray(q, v, rho, T)
            a = first_collision(cfg, ray, check_launch=False)
        b = first_collision_bruteforce(cfg, ray)
        done += 1
        if a.status != b.status:
            bad += 1
            continue
        if a.hit:
            worst = max(worst, abs(a.tau - b.tau))
            if a.h != b.h or not np.array_equal(a.y, b.y) or abs(a.tau - b.tau) > 1e-12:
                bad += 1
    elapsed = time.time() - start
    ok = bad == 0 and elapsed < 120
    assert acceptance(1, ok, f"{done} instances, mismatches={bad}, max|dtau|={worst:.1e}, {elapsed:.0f}s")


def test_02_poisson_control(acceptance):
    xi = poisson_fpl_ensemble(2, 1e-3, N_SMALL, seed=7)
    ks = ks_distance(EmpiricalSurvival.from_xi(xi), exponential_survival(2))
    assert acceptance(2, ks <= 0.01, f"KS to Exp(2) = {ks:.4f} (<= 0.01), n={len(xi)}")


def test_03_single_lattice_tail(acceptance, z2_lattice_run):
    S = z2_lattice_run.survival()
    fit = fit_tail_exponent(S, (5, 50))
    target = 1 / (2 * PI**2)
    ok = abs(fit.exponent + 2) <= 0.3 and abs(fit.amplitude / target - 1) <= 0.25
    assert acceptance(3, ok, f"exponent {fit.exponent:.3f} (-2 +- 0.3), amplitude {fit.amplitude:.4f} "
                             f"vs {target:.4f} (+-25%), censored {S.censored_fraction:.1e}")


def test_04_single_lattice_small_xi(acceptance, z2_lattice_run):
    est = _small_xi_density(z2_lattice_run.survival())
    target = 12 / PI**2
    ok = abs(est / target - 1) <= 0.10
    assert acceptance(4, ok, f"density at 0: {est:.4f} vs {target:.5f} (+-10%)")


def test_05_union_constants(acceptance, family_lattice_run, family_generic_run, union_tables):
    cons_fit = fit_tail_exponent(family_lattice_run.survival(), (5, 50))
    gen_fit = fit_tail_exponent(family_generic_run.survival(), (5, 50))
    a = abs(cons_fit.exponent + 3) <= 0.4 and abs(gen_fit.exponent + 2) <= 0.3
    _, tabs = union_tables
    cs = tabs.consecutive_survival_table()
    composed0 = density_at_zero(cs.grid, cs.values)
    sim0 = _small_xi_density(family_lattice_run.survival())
    b = abs(composed0 / sim0 - 1) <= 0.10
    t = tail_constants(2, 2, [0.5, 0.5])
    c = abs(t["C_consecutive"] - 12 / PI**4) <= 1e-12 and abs(t["C_generic"] - 8 / PI**4) <= 1e-12
    assert acceptance(5, a and b and c,
                      f"(a) exponents {cons_fit.exponent:.3f} / {gen_fit.exponent:.3f}; "
                      f"(b) composed {composed0:.4f} vs simulated {sim0:.4f} "
                      f"(closed form {1 + 6 / PI**2:.4f}); (c) constants exact={c}")


def test_06_composition(acceptance, z2_generic_run, family_generic_run):
    base = SurvivalTable.from_empirical(z2_generic_run.survival())
    comp = compose_union_survival([base, base], [0.5, 0.5])
    direct = EmpiricalSurvival.from_xi(family_generic_run.xi[:N_SMALL], family_generic_run.xi_T)
    ks = ks_distance(direct, comp, 0.0, 20.0)
    assert acceptance(6, ks <= 0.02, f"KS direct vs composed on [0,20] = {ks:.4f} (<= 0.02)")


def test_07_kernel_identities(acceptance, union_tables):
    _, tabs = union_tables
    norm = tabs.normalization()
    norm_err = float(np.abs(norm - 1).max())
    sym = float(tabs.symmetry_l1().max())
    bnd = tabs.boundary_values() / tabs.nbar[:, None]
    bnd_err = float(np.abs(bnd - 1).max())
    raw_norm = tabs.single.generic_norm
    ok = norm_err <= 0.02 and abs(raw_norm - 1) <= 0.02 and sym <= 0.05 and bnd_err <= 0.02
    assert acceptance(7, ok, f"normalization err {norm_err:.1e} (table norm {raw_norm:.4f}), "
                             f"symmetry L1 {sym:.4f}, boundary err {bnd_err:.4f}")


def test_08_derivative_relation(acceptance, union_tables, family_lattice_run):
    # single-lattice law tabulated from the 10^6-ray kernel run (integral form, one noisy derivative)
    base = union_tables[1].single.generic_survival_table()
    phiP = generic_point_density([base, base], [0.5, 0.5])
    cons = consecutive_from_generic(phiP, 2)
    ks = ks_distance(family_lattice_run.survival(), cons.survival(), 0.0, 20.0)
    assert acceptance(8, ks <= 0.03, f"KS derived vs simulated consecutive law = {ks:.4f} (<= 0.03)")


def test_09_flight_chain(acceptance, union_tables, family_lattice_run):
    kf = KernelFamily.from_tables(union_tables[1])
    run = run_flight(kf, 2000, seed=9, chains=50)  # 10^5 steps in total
    chain = EmpiricalSurvival.from_xi(run.xi[1000:].ravel())
    ks_chain = ks_distance(chain, family_lattice_run.survival())
    xi0, _, resid, _, steps = observe_at(kf, 500.0, 5000, seed=10)
    ks_stat = ks_distance(EmpiricalSurvival.from_xi(xi0), EmpiricalSurvival.from_xi(resid))
    ok = ks_chain <= 0.05 and ks_stat <= 0.05
    assert acceptance(9, ok, f"chain vs direct KS {ks_chain:.4f}, stationarity KS {ks_stat:.4f} "
                             f"(mean {steps.mean():.0f} steps)")


def test_10_independence(acceptance):
    fam = build_example_family(2, 2, Base.radical(2, 2))
    mats = [lat.float_matrix for lat in fam.lattices]
    out = independence_diagnostic(mats, math.log(1e3), 10_000, seed=0)
    corr = float(out["corr"][0, 1])
    ctrl = independence_diagnostic([mats[0], mats[0]], math.log(1e3), 2000, seed=0)["corr"][0, 1]
    from scipy.stats import spearmanr

    rank = float(spearmanr(out["counts"][0], out["counts"][1]).statistic)
    ok = abs(corr) <= 0.05 and ctrl == 1.0
    assert acceptance(10, ok, f"Pearson corr {corr:.4f} (|.| <= 0.05), Spearman {rank:.4f}, "
                              f"control corr {ctrl}")


def test_11_determinism(acceptance, tmp_path, monkeypatch):
    from pathlib import Path

    from lorentz_union.cli import main

    cfg = str(Path(__file__).resolve().parents[1] / "configs" / "family_n2_sqrt2.json")
    args = ["simulate", cfg, "--rho", "1e-3", "--samples", str(N_SMALL), "--launch", "lattice:all",
            "--horizon", "1e5", "--seed", "11"]
    monkeypatch.delenv("LUL_WORKERS", raising=False)
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("LUL_WORKERS", "2")
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    monkeypatch.delenv("LUL_WORKERS")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("survival.csv", "density.csv", "kernel.csv"))
    assert main(["compose", "--phizero-kernel", str(tmp_path / "a"), "--densities", "1/2,1/2",
                 "--out", str(tmp_path / "c")]) == 0
    fl = ["flight", "--kernels", str(tmp_path / "c"), "--steps", "300", "--chains", "10",
          "--burn-in", "100", "--seed", "3"]
    assert main(fl + ["--out", str(tmp_path / "f1")]) == 0
    assert main(fl + ["--out", str(tmp_path / "f2")]) == 0
    same_f = all((tmp_path / d / "trajectory.csv").read_bytes() == (tmp_path / "f1" / "trajectory.csv").read_bytes()
                 for d in ("f2",))
    s1 = json.loads((tmp_path / "f1" / "summary.json").read_text())
    s2 = json.loads((tmp_path / "f2" / "summary.json").read_text())
    ok = same and same_f and s1 == s2
    assert acceptance(11, ok, f"simulate reruns (1 vs 2 workers) identical={same}, "
                              f"flight reruns identical={same_f and s1 == s2}")
