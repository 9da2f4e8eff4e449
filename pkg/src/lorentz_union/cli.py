"""Command line: check | simulate | compose | flight | equitest."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, validate_configuration
from .stats import (CHUNK, EmpiricalSurvival, LaunchSpec, fit_tail_exponent, independence_diagnostic,
                    kernel_xi_edges, ks_distance, simulate_fpl_ensemble)

EXIT_OK, EXIT_USAGE, EXIT_COMMENSURABLE, EXIT_NORMALIZATION, EXIT_RUNTIME = 0, 1, 2, 3, 4
RNG_NOTE = (f"numpy SeedSequence([seed, unit]) -> PCG64 per work unit; simulate units are "
            f"chunks of {CHUNK} rays, flight units are blocks of 1024 chains")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def write_csv(path, header, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(f"{x:.17g}" for x in r) + "\n")


def read_csv(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data.reshape(-1, len(header))


def write_manifest(out: Path, command: str, args, params: dict, started: float, **extra):
    workers = os.environ.get("LUL_WORKERS") or getattr(args, "workers", 1)
    man = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "workers": int(workers) if workers else 1,
        "output_dir": str(out),
        "tool_version": _version(),
        "wall_clock_s": round(time.time() - started, 3),
        "rng": RNG_NOTE,
        "parameters": params,
    }
    man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")


def _exit_for(report) -> int:
    kinds = {v.kind for v in report.violations}
    if kinds & {"density_sum", "determinant", "float_mismatch"}:
        return EXIT_NORMALIZATION
    if kinds & {"commensurable", "undecidable"}:
        return EXIT_COMMENSURABLE
    return EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_check(args) -> int:
    cfg = load_config(args.config)
    report = validate_configuration(cfg)
    if cfg.mode == "asserted":
        print("WARNING: incommensurability is asserted, not checked", file=sys.stderr)
    print(report)
    return _exit_for(report)


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    report = validate_configuration(cfg)
    code = _exit_for(report)
    if code:
        print(report, file=sys.stderr)
        return code
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    launch = LaunchSpec.parse(args.launch, args.rho, args.horizon,
                              q=None if args.q is None else [float(x) for x in args.q.split(",")])
    ens = simulate_fpl_ensemble(cfg, launch, args.samples, args.seed, args.workers)
    S = ens.survival()
    write_csv(out / "survival.csv", ["xi", "S_hat"], S.to_rows())
    hist = ens.density_histogram()
    write_csv(out / "density.csv", ["bin_lo", "bin_hi", "mass"], hist.to_rows())
    cols = ["j", "xi_lo", "xi_hi", "w_lo", "w_hi", "z_lo", "z_hi", "mass"]
    extra = {}
    if cfg.d == 2:
        K = ens.kernel(kernel_xi_edges(ens.xi_T))
        write_csv(out / "kernel.csv", cols, K.to_rows())
        np.savez_compressed(out / "kernel_counts.npz", counts=K.counts, xi_edges=K.xi_edges,
                            w_edges=K.w_edges, z_edges=K.z_edges, n=K.n, censored=K.censored)
    else:
        write_csv(out / "kernel.csv", cols, np.zeros((0, 8)))
        extra["kernel_note"] = "kernel histograms are produced for d = 2 only"
    summary = {"n": ens.n, "censored": S.censored, "censored_fraction": S.censored_fraction,
               "xi_T": ens.xi_T, "label_counts": np.bincount(ens.labels, minlength=cfg.N + 1).tolist()}
    params = {"rho": args.rho, "samples": args.samples, "horizon": args.horizon,
              "launch": launch.describe(), "q": args.q}
    write_manifest(out, "simulate", args, params, started, summary=summary, **extra)
    print(json.dumps(summary))
    return EXIT_OK


def _parse_densities(text):
    return [Fraction(x.strip()) for x in text.split(",") if x.strip()]


def _load_survival_input(spec, d):
    from .laws import SurvivalTable, exponential_survival

    if spec == "exponential":
        return exponential_survival(d)
    p = Path(spec)
    if p.is_dir():
        p = p / "survival.csv"
    header, data = read_csv(p)
    if header[:2] == ["xi", "S_hat"]:
        # empirical step function evaluated on the kernel grid
        xs, Ss = data[:, 0], data[:, 1]
        grid = kernel_xi_edges(max(xs[-1], 20.0) if len(xs) else 20.0)
        grid = grid[grid <= xs[-1]] if len(xs) > 1 else grid
        idx = np.searchsorted(xs, grid, side="right") - 1
        vals = np.minimum.accumulate(Ss[np.maximum(idx, 0)])
        vals[0] = 1.0
        return SurvivalTable(grid, vals, None, "empirical")
    return SurvivalTable.load(p)


def _load_kernel(spec):
    from .laws import SingleLatticeKernel
    from .stats import JointKernelHistogram

    p = Path(spec)
    if p.is_dir():
        p = p / "kernel_counts.npz"
    z = np.load(p)
    H = JointKernelHistogram(z["xi_edges"], z["w_edges"], z["z_edges"], z["counts"], int(z["n"]),
                             int(z["censored"]))
    return SingleLatticeKernel.from_histogram(H)


def cmd_compose(args) -> int:
    from .laws import (compose_union_survival, consecutive_from_generic, density_at_zero,
                       generic_point_density, launch_from_lattice_density, small_xi_constants,
                       tail_constants)

    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nbar = _parse_densities(args.densities)
    if sum(nbar) != 1:
        print(f"densities sum to {sum(nbar)}, not 1", file=sys.stderr)
        return EXIT_NORMALIZATION
    N, d = len(nbar), args.d
    results = {}
    single = _load_kernel(args.phizero_kernel) if args.phizero_kernel else None
    if args.phi:
        base = _load_survival_input(args.phi, d)
    elif single is not None:
        base = single.generic_survival_table()
    else:
        print("need --phi and/or --phizero-kernel", file=sys.stderr)
        return EXIT_USAGE
    comp = compose_union_survival([base] * N, nbar)
    comp.save(out / "generic_survival.csv")
    phiP = generic_point_density([base] * N, nbar, smooth=args.smooth)
    phiP.save(out / "generic_density.csv")
    cons = consecutive_from_generic(phiP, d, smooth=args.smooth)
    cons.save(out / "consecutive_from_generic.csv")
    results["generic_density_adjustment"] = phiP.adjustment
    results["consecutive_from_generic_adjustment"] = cons.adjustment
    if single is not None:
        dens, tabs = launch_from_lattice_density(single, nbar)
        dens.save(out / "consecutive_density.csv")
        tabs.consecutive_survival_table().save(out / "consecutive_survival.csv")
        tabs.save(out / "kernels.npz")
        cs = tabs.consecutive_survival_table()
        results["identities"] = {
            "normalization_min": float(tabs.normalization().min()),
            "normalization_max": float(tabs.normalization().max()),
            "symmetry_l1": tabs.symmetry_l1().tolist(),
            "boundary_min": float((tabs.boundary_values() / tabs.nbar[:, None]).min()),
            "boundary_max": float((tabs.boundary_values() / tabs.nbar[:, None]).max()),
            "marginal_chain_l1": tabs.marginal_chain_error(),
            "single_table_norm": single.generic_norm,
        }
        results["consecutive_at_zero_composed"] = density_at_zero(cs.grid, cs.values)
    consts = {"tail": tail_constants(N, d, nbar), "small_xi": small_xi_constants(N, d, nbar),
              **results}
    (out / "constants.json").write_text(json.dumps(consts, indent=2, sort_keys=True) + "\n")
    params = {"phi": args.phi, "phizero_kernel": args.phizero_kernel,
              "densities": [str(x) for x in nbar], "d": d, "smooth": args.smooth}
    write_manifest(out, "compose", args, params, started)
    print(json.dumps(consts["tail"]))
    return EXIT_OK


def cmd_flight(args) -> int:
    from .flight import KernelFamily, run_flight
    from .laws import UnionKernelTables

    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = Path(args.kernels)
    tabs = UnionKernelTables.load(p / "kernels.npz" if p.is_dir() else p)
    kf = KernelFamily.from_tables(tabs)
    run = run_flight(kf, args.steps, args.seed, args.chains)
    write_csv(out / "trajectory.csv", ["step", "j", "xi", "Vx", "Vy", "Qx", "Qy"], run.traj)
    burn = min(args.burn_in, args.steps)
    xs = run.xi[burn:].ravel()
    summary = {"steps": args.steps, "chains": args.chains, "burn_in": burn, "samples": int(xs.size),
               "mean_xi": float(xs.mean()) if xs.size else None,
               "transition_counts": run.transition_counts(burn).tolist() if xs.size else [],
               "normalization": kf.normalization().tolist()}
    if xs.size:
        emp = EmpiricalSurvival.from_xi(xs)
        summary["ks_vs_composed"] = ks_distance(emp, tabs.consecutive_survival_table())
        if args.compare:
            header, data = read_csv(Path(args.compare) / "survival.csv"
                                    if Path(args.compare).is_dir() else args.compare)
            ref = _step_table(data)
            summary["ks_vs_direct"] = ks_distance(emp, ref)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "flight", args, {"kernels": args.kernels, "steps": args.steps,
                                         "chains": args.chains, "burn_in": burn,
                                         "compare": args.compare}, started)
    print(json.dumps({k: v for k, v in summary.items() if k.startswith("ks") or k == "mean_xi"}))
    return EXIT_OK


class _StepSurvival:
    """Survival step function given as (xi, S) rows."""

    def __init__(self, data):
        self.grid = data[:, 0]
        self.vals = data[:, 1]

    def __call__(self, x):
        idx = np.searchsorted(self.grid, np.asarray(x, float), side="right") - 1
        return self.vals[np.clip(idx, 0, len(self.vals) - 1)]


def _step_table(data):
    return _StepSurvival(data)


def cmd_equitest(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    mats = [lat.float_matrix for lat in cfg.lattices]
    rep = independence_diagnostic(mats, args.t, args.samples, args.seed, args.box)
    report = {"t": args.t, "exp_t": float(np.exp(args.t)), "n": args.samples, "box": args.box,
              "means": rep["means"].tolist(), "stderr": rep["stderr"].tolist(),
              "box_volume": rep["box_volume"], "corr": rep["corr"].tolist(),
              "chi2": {f"{a}-{b}": v for (a, b), v in rep["chi2"].items()},
              "pre_asymptotic": rep["pre_asymptotic"]}
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "equitest.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        write_manifest(out, "equitest", args, {"t": args.t, "samples": args.samples,
                                               "box": args.box}, started)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lul", description="Lorentz gas on unions of lattices")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="free path ensemble")
    p.add_argument("config")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--horizon", type=float, default=None,
                   help="max flight length (default 100 / rho^(d-1))")
    p.add_argument("--launch", default="generic", help="generic | lattice:j | lattice:all | radial:j")
    p.add_argument("--q", default=None, help="generic launch point, comma separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1, help="worker processes (LUL_WORKERS overrides)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compose", help="compose single-lattice tables into union laws")
    p.add_argument("--phi", default=None,
                   help="generic single-lattice survival: simulate dir, CSV, or 'exponential'")
    p.add_argument("--phizero-kernel", default=None,
                   help="kernel_counts.npz (or simulate dir) of a lattice launch")
    p.add_argument("--densities", required=True, help="e.g. 1/2,1/2")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--smooth", type=float, default=0.0, help="uniform step for differentiation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("flight", help="run the random flight chain")
    p.add_argument("--kernels", required=True, help="kernels.npz from compose (or its dir)")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--compare", default=None, help="direct-simulation survival.csv for KS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flight)

    p = sub.add_parser("equitest", help="independence diagnostic (d = 2)")
    p.add_argument("--config", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--box", type=float, default=1.0, help="half-width of the square box")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_equitest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "horizon", "unset") is None:
            args.horizon = 100.0 / args.rho ** (load_config(args.config).d - 1)
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
