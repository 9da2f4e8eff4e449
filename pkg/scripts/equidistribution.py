"""Counts in a stretched box for two lattices, as t grows: Pearson, rank and trimmed correlation."""
import argparse
import math

import numpy as np
from scipy.stats import spearmanr

from lorentz_union.config import build_example_family
from lorentz_union.exact import Base
from lorentz_union.stats import independence_diagnostic

ap = argparse.ArgumentParser()
ap.add_argument("--samples", type=int, default=10_000)
ap.add_argument("--seeds", type=int, default=4)
a = ap.parse_args()

mats = [l.float_matrix for l in build_example_family(2, 2, Base.radical(2, 2)).lattices]
print("e^t  seed  mean1  mean2  pearson  spearman  pearson_trim5  chi2_p")
for et in (10, 100, 1000, 10_000):
    for seed in range(a.seeds):
        out = independence_diagnostic(mats, math.log(et), a.samples, seed)
        X, Y = out["counts"].astype(float)
        c = (X - X.mean()) * (Y - Y.mean())
        keep = np.ones(len(X), bool)
        keep[np.argsort(-np.abs(c))[:5]] = False
        trim = np.corrcoef(X[keep], Y[keep])[0, 1]
        p = out["chi2"][(1, 2)]["pvalue"]
        print(f"{et:>6} {seed:>4} {X.mean():6.3f} {Y.mean():6.3f} {out['corr'][0, 1]:8.4f} "
              f"{spearmanr(X, Y).statistic:9.4f} {trim:14.4f} {p:7.3f}")
