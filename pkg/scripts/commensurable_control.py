"""Control: the zeta = 2 family is commensurable; run it anyway (asserted mode) and compare laws."""
import argparse
import math
import warnings

import numpy as np

from lorentz_union.config import UnionConfiguration, build_example_family, validate_configuration
from lorentz_union.exact import Base
from lorentz_union.laws import density_at_zero
from lorentz_union.stats import LaunchSpec, fit_tail_exponent, simulate_fpl_ensemble

ap = argparse.ArgumentParser()
ap.add_argument("--rho", type=float, default=1e-3)
ap.add_argument("--samples", type=int, default=200_000)
ap.add_argument("--seed", type=int, default=5)
a = ap.parse_args()

checked = build_example_family(2, 2, Base.radical(2, 1))
print("checked mode:", validate_configuration(checked))
forced = UnionConfiguration(2, checked.lattices, mode="asserted")
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    validate_configuration(forced)
good = build_example_family(2, 2, Base.radical(2, 2))
g = np.linspace(0, 0.1, 201)
for name, cfg in (("zeta=2 (commensurable)", forced), ("zeta=sqrt2", good)):
    S = simulate_fpl_ensemble(cfg, LaunchSpec("lattice_all", a.rho, 100 / a.rho), a.samples,
                              a.seed).survival()
    f = fit_tail_exponent(S, (5, 50))
    print(f"{name}: density at 0 {density_at_zero(g, S(g)):.4f} (union law {1 + 6 / math.pi ** 2:.4f}), "
          f"tail exponent {f.exponent:.3f} (union law -3)")
