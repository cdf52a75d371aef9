"""Command-line front end: estimate | predict | simulate | compare | sweep.

Exit codes: 0 success, 2 validation error, 3 numerical abort (invariant violation or an
inconclusive estimate), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .analytic import (
    AnalyticModel,
    PolarizationCurve,
    analytic_curve,
    long_time_rate,
    tail_rate,
    transfer_efficiency,
)
from .compare import GridMismatchError, combined_table, compare_curves
from .gaussian import InvariantViolationError, StepSizeError, run
from .manifest import RunManifest
from .statistics import InconclusiveEstimateError, estimate_correlation, regime_chi, validity_horizon
from .sweep import COLUMNS, SWEEPABLE, run_sweep
from .units import ConfigError, load_config

log = logging.getLogger("nvdnp")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _prepare(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "traj", None) is not None and args.command in ("simulate",):
        changes["n_traj"] = args.traj
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, cfg.digest())
    manifest.add_input(args.config)
    return cfg, out, manifest


def cmd_estimate(args) -> int:
    cfg, out, manifest = _prepare(args)
    n_traj = args.traj or 200
    manifest.seed_schedule = {"seed": cfg.seed, "streams": f"correlation 0..{n_traj - 1}"}
    with manifest.timed("estimate"):
        est = estimate_correlation(cfg, n_traj, walkers_per_traj=args.walkers, workers=args.threads)
    chi, label = regime_chi(cfg, est)
    horizon = validity_horizon(cfg, est)
    est.meta.update({"regime": label, "validity_horizon_us": horizon, "config_digest": cfg.digest()})
    path = out / "estimate.json"
    est.write(path)
    manifest.add_output(path)
    if not args.no_plots:
        manifest.add_output(plotting.plot_gamma(est, out / "estimate_gamma.png"))
    manifest.write(out)
    print(f"sigma2 = {est.sigma2:.6g} rad^2/us^2   N = {cfg.N}   N*sigma2 = {cfg.N * est.sigma2:.6g}")
    print(f"tau_c  = {est.tau_c:.4g} +/- {est.stderr['tau_c']:.2g} us  (exp-fit residual {est.exp_fit_residual:.3f})")
    print(f"chi    = {chi:.4g}  [{label}]   validity horizon = {horizon:.4g} us")
    return EXIT_OK


def _model(cfg, est, T1rho="cfg"):
    return AnalyticModel.from_estimate(cfg, est, **({} if T1rho == "cfg" else {"T1rho": T1rho}))


def cmd_predict(args) -> int:
    cfg, out, manifest = _prepare(args)
    from .statistics import CorrelationEstimate

    if not Path(args.estimate).exists():
        raise FileNotFoundError(f"estimate report not found: {args.estimate}")
    est = CorrelationEstimate.read(args.estimate)
    manifest.add_input(args.estimate)
    grid = np.arange(0.0, cfg.t_max + 0.5 * cfg.dt, cfg.dt)
    horizon = validity_horizon(cfg, est)
    chi, label = regime_chi(cfg, est)
    base = _model(cfg, est, T1rho=None)
    header = {
        "config_digest": cfg.digest(),
        "validity_horizon_us": horizon,
        "chi": chi,
        "regime": label,
        "inv_tau_p_per_us": long_time_rate(base),
    }
    if horizon < cfg.t_max:
        header["warning"] = f"validity horizon {horizon:.4g} us is shorter than t_max {cfg.t_max:.4g} us"
        log.warning(header["warning"])
    curves, labels = [analytic_curve(base, grid, **header)], ["closed form"]
    path = out / "prediction.csv"
    curves[0].write_csv(path)
    manifest.add_output(path)
    if cfg.T1rho is not None:
        relaxed = _model(cfg, est)
        extra = dict(header, alpha=transfer_efficiency(relaxed))
        curve = analytic_curve(relaxed, grid, **extra)
        path = out / "prediction_T1rho.csv"
        curve.write_csv(path)
        manifest.add_output(path)
        curves.append(curve)
        labels.append(f"with T1rho = {cfg.T1rho:g} us")
        print(f"tail rate = {tail_rate(relaxed):.5g} /us   alpha = {transfer_efficiency(relaxed):.3f}")
    print(f"1/tau_p = {long_time_rate(base):.5g} /us   horizon = {horizon:.4g} us   chi = {chi:.4g} [{label}]")
    if not args.no_plots:
        manifest.add_output(plotting.plot_curves(curves, out / "prediction.png", labels))
    manifest.write(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, out, manifest = _prepare(args)
    manifest.seed_schedule = {"seed": cfg.seed, "streams": f"simulation 0..{cfg.n_traj - 1}"}
    try:
        with manifest.timed("simulate"):
            outcome = run(cfg, workers=args.threads, backend=args.backend)
    except InvariantViolationError as exc:
        dump = out / "diagnostics_abort.json"
        dump.write_text(json.dumps(exc.diagnostics, indent=2, sort_keys=True) + "\n")
        manifest.add_output(dump)
        manifest.write(out)
        raise
    path = out / "simulation.csv"
    outcome.curve.write_csv(path)
    manifest.add_output(path)
    diag = dict(outcome.diagnostics, bath_gain=outcome.bath_gain, config_digest=cfg.digest())
    dpath = out / "simulation_diagnostics.json"
    dpath.write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    manifest.add_output(dpath)
    if not args.no_plots:
        manifest.add_output(plotting.plot_curves([outcome.curve], out / "simulation.png", ["gaussian-sim"]))
    manifest.write(out)
    print(f"<n>(t_max) = {outcome.curve.n_mean[-1]:.5f} +/- {outcome.curve.stderr[-1]:.2g}  "
          f"({cfg.n_traj} trajectories, N = {cfg.N})")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("compare")
    curves = []
    for p in args.curves:
        curves.append(PolarizationCurve.read_csv(p))
        manifest.add_input(p)
    labels = [Path(p).stem for p in args.curves]
    measured = None
    if args.measured:
        measured = PolarizationCurve.read_csv(args.measured)
        measured.provenance = "measured"
        manifest.add_input(args.measured)
    if not curves and measured is None:
        raise ConfigError("nothing to compare")
    report = compare_curves(curves, labels, measured, t_tail=args.tail_start, T1rho=args.T1rho,
                            horizon=args.horizon if args.horizon is not None else math.inf)
    path = out / "comparison.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.add_output(path)
    everything = curves + ([measured] if measured is not None else [])
    names = labels + (["measured"] if measured is not None else [])
    path = out / "comparison.dat"
    path.write_text(combined_table(everything, names))
    manifest.add_output(path)
    if not args.no_plots:
        manifest.add_output(plotting.plot_curves(everything, out / "comparison.png", names))
    manifest.write(out)
    for name, rms in report["rms"].items():
        line = f"{name:>24s}: RMS vs {report['reference']} = {rms['relative']:.4f}"
        if name in report["tail"] and "rate_per_us" in report["tail"][name]:
            t = report["tail"][name]
            line += f"   tail rate = {t['rate_per_us']:.4g} /us   alpha(tail) = {t['alpha_from_tail']:.3f}"
        print(line)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out, manifest = _prepare(args)
    values = [float(v) for v in args.values.split(",")]
    n_traj = args.traj or 200
    manifest.seed_schedule = {"seed": cfg.seed, "streams": f"correlation 0..{n_traj - 1} per point"}
    with manifest.timed("sweep"):
        rows, fits = run_sweep(cfg, args.param, values, n_traj=n_traj, walkers_per_traj=args.walkers,
                               scale_box=not args.fixed_box, workers=args.threads)
    path = out / f"sweep_{args.param}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# parameter: {args.param}\n# config_digest: {cfg.digest()}\n")
        for key in sorted(fits):
            fh.write(f"# {key}: {fits[key]!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([row[c] if isinstance(row[c], str) else repr(float(row[c])) for c in COLUMNS])
    manifest.add_output(path)
    if not args.no_plots:
        manifest.add_output(plotting.plot_sweep([r["value"] for r in rows], [r["inv_tau_p_per_us"] for r in rows],
                                                args.param, out / f"sweep_{args.param}.png",
                                                fits.get("slope_inv_tau_p_per_us")))
    manifest.write(out)
    for row in rows:
        if row["error"]:
            print(f"{args.param} = {row['value']:g}: {row['error']}")
        else:
            print(f"{args.param} = {row['value']:g}: tau_c = {row['tau_c_us']:.4g} us, "
                  f"1/tau_p = {row['inv_tau_p_per_us']:.4g} /us, alpha = {row['alpha']:.3f}, "
                  f"chi = {row['chi']:.3g} [{row['regime']}]")
    if "law_exponent" in fits:
        print(f"exponent of 1/tau_p in the scaling law: {fits['law_exponent']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvdnp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out-dir", default=".", help="directory for outputs (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--traj", type=int, default=None, help="number of trajectories")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("estimate", help="Monte-Carlo sigma^2, tau_c, gamma(t) and chi")
    common(p)
    p.add_argument("--walkers", type=int, default=500, help="walkers per trajectory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("predict", help="analytic polarization curves from an estimate report")
    common(p)
    p.add_argument("--estimate", required=True, help="estimate.json from the estimate command")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="bosonized Gaussian-state ensemble simulation")
    common(p)
    p.add_argument("--backend", choices=("amplitude", "dense"), default="amplitude")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare curve CSVs with each other and with measured data")
    common(p, config=False)
    p.add_argument("curves", nargs="*", help="curve CSV files (t_us, n_mean, stderr, provenance)")
    p.add_argument("--measured", help="measured data CSV (t_us, population, error)")
    p.add_argument("--tail-start", type=float, default=None, help="start of the tail-fit window (us)")
    p.add_argument("--T1rho", type=float, default=None, help="T1rho (us) for the tail-based alpha")
    p.add_argument("--horizon", type=float, default=None, help="validity horizon (us) for pre-horizon RMS")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="sweep one parameter through the estimation pipeline")
    common(p)
    p.add_argument("--param", required=True, choices=SWEEPABLE)
    p.add_argument("--values", required=True, help="comma-separated values in config units (B in tesla)")
    p.add_argument("--walkers", type=int, default=500)
    p.add_argument("--fixed-box", action="store_true", help="keep the box fixed when sweeping z0")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GridMismatchError, StepSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvariantViolationError, InconclusiveEstimateError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
