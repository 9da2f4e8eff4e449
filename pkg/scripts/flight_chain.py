"""Random flight chain built from a single-lattice kernel, compared with a direct union run."""
import argparse

import numpy as np

from lorentz_union.config import UnionConfiguration, build_example_family, integer_lattice
from lorentz_union.exact import Base
from lorentz_union.flight import KernelFamily, observe_at, run_flight
from lorentz_union.laws import SingleLatticeKernel, launch_from_lattice_density
from lorentz_union.stats import (EmpiricalSurvival, LaunchSpec, kernel_xi_edges, ks_distance,
                                 simulate_fpl_ensemble)

ap = argparse.ArgumentParser()
ap.add_argument("--rho", type=float, default=1e-3)
ap.add_argument("--samples", type=int, default=300_000)
ap.add_argument("--steps", type=int, default=2000)
ap.add_argument("--chains", type=int, default=50)
ap.add_argument("--seed", type=int, default=3)
a = ap.parse_args()

z2 = UnionConfiguration(2, [integer_lattice(2)])
run = simulate_fpl_ensemble(z2, LaunchSpec("lattice", a.rho, 100 / a.rho), a.samples, a.seed)
single = SingleLatticeKernel.from_histogram(run.kernel(kernel_xi_edges(run.xi_T)))
_, tabs = launch_from_lattice_density(single, [0.5, 0.5])
print("normalization", tabs.normalization().min(), tabs.normalization().max())
print("symmetry L1", tabs.symmetry_l1().round(4).tolist())
print("boundary / nbar", (tabs.boundary_values() / tabs.nbar[:, None]).min(),
      (tabs.boundary_values() / tabs.nbar[:, None]).max())

fam = build_example_family(2, 2, Base.radical(2, 2))
direct = simulate_fpl_ensemble(fam, LaunchSpec("lattice_all", a.rho, 100 / a.rho), a.samples,
                               a.seed + 1).survival()
kf = KernelFamily.from_tables(tabs)
fl = run_flight(kf, a.steps, a.seed + 2, a.chains)
burn = a.steps // 2
chain = EmpiricalSurvival.from_xi(fl.xi[burn:].ravel())
print(f"chain vs direct KS {ks_distance(chain, direct):.4f}; "
      f"composed vs direct KS {ks_distance(tabs.consecutive_survival_table(), direct):.4f}")
C = fl.transition_counts(burn)
print("label transition matrix", (C / C.sum(axis=1, keepdims=True)).round(3).tolist())
for t in (5.0, 50.0, 500.0):
    xi0, _, resid, _, steps = observe_at(kf, t, 5000, a.seed + 3)
    ks = ks_distance(EmpiricalSurvival.from_xi(xi0), EmpiricalSurvival.from_xi(resid))
    print(f"t={t}: residual law vs start KS {ks:.4f} after {np.mean(steps):.0f} steps")
