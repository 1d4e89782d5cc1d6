"""Command-line front end.

    mblprobe sweep     --config run.yaml [--out DIR] [--jobs K] [--seed S]
    mblprobe analyze   --table DIR/ensemble.csv [--config run.yaml] [--out DIR]
    mblprobe estimate  --peaks peaks.csv [--config run.yaml] [--allow-unconverged]
    mblprobe calibrate --config run.yaml [--out DIR]
    mblprobe units     VALUE --from ns --to J1t
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, units
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("mblprobe")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_COMPUTE = 4
EXIT_UNCONVERGED = 5


class CommandError(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def write_json(path: Path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=False, allow_nan=False, default=_jsonable)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _versions() -> dict:
    return {"mblprobe": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    seed = getattr(args, "seed", None) if args.command == "sweep" else None
    return load_config(args.config, seed=seed)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- sweep -----------------------------------------------------------------


def cmd_sweep(args) -> int:
    from .protocol import SweepSettings, run_sweep

    cfg = _config(args)
    spec, plan = cfg.spec(), cfg.run_plan()
    out = _out_dir(args, cfg)
    jobs = args.jobs or cfg.solver.jobs
    settings = SweepSettings(mode=cfg.plan.mode, method=cfg.solver.method, tol=cfg.solver.tol,
                             noise=cfg.noise_spec(), open_method=cfg.noise.method,
                             n_trajectories=cfg.noise.trajectories)
    digest = cfg.config_hash()
    n_units = plan.disorder_grid.size * plan.realizations
    start = time.perf_counter()
    done = [0]

    def progress(hi, r):
        done[0] += 1
        if done[0] % max(1, n_units // 50) == 0 or done[0] == n_units:
            elapsed = time.perf_counter() - start
            log.info("%d/%d units, %.0f s elapsed, ~%.0f s left", done[0], n_units, elapsed,
                     elapsed / done[0] * (n_units - done[0]))

    log.info("sweep %s: %d cells over %d units, %d job(s)", digest, plan.n_cells(), n_units, jobs)
    table = run_sweep(spec, plan, settings, jobs=jobs, config_hash=digest, progress=progress)
    wall = time.perf_counter() - start
    table.to_csv(out / "ensemble.csv")
    with open(out / "config.yaml", "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(cfg.model_dump(mode="json"), fh, sort_keys=False)
    write_json(out / "manifest.json", {
        "command": "sweep",
        "config_hash": digest,
        "master_seed": plan.master_seed,
        "schema_version": cfg.schema_version,
        "cells": len(table),
        "units": n_units,
        "jobs": jobs,
        "wall_time_s": round(wall, 3),
        "failures": [{"h_index": hi, "realization": r, "h": h, "error": e}
                     for hi, r, h, e in table.failures],
        "versions": _versions(),
    })
    log.info("wrote %s (%d cells) in %.1f s", out / "ensemble.csv", len(table), wall)
    if table.failures:
        raise CommandError(f"{len(table.failures)} unit(s) failed; partial table kept",
                           EXIT_COMPUTE)
    return EXIT_OK


# -- analyze ---------------------------------------------------------------


def _distribution_points(cfg: RunConfig, grid: np.ndarray, peak_h: dict) -> list:
    """h indices for distribution output: configured values, else ends plus peaks."""
    if cfg.analysis.distribution_h is not None:
        wanted = cfg.analysis.distribution_h
    else:
        wanted = [grid[0], grid[-1], *peak_h.values()]
    out = []
    for h in wanted:
        hi = int(np.argmin(np.abs(grid - h)))
        if hi not in out:
            out.append(hi)
    return sorted(out)


def cmd_analyze(args) -> int:
    from .statistics import (InsufficientDataError, average_over_states, curves_to_csv,
                             fit_state_averaged, find_peak, peak_table, state_curves)
    from .table import EnsembleTable, TableFormatError

    cfg = _config(args)
    try:
        table = EnsembleTable.from_csv(args.table)
    except TableFormatError as exc:
        raise CommandError(str(exc), EXIT_COMPUTE) from exc
    if args.config is not None and table.config_hash != cfg.config_hash() and not args.ignore_hash:
        raise CommandError(
            f"table hash {table.config_hash} does not match config hash {cfg.config_hash()} "
            "(use --ignore-hash to override)", EXIT_CONFIG)
    out = _out_dir(args, cfg) if args.out or args.config else Path(args.table).parent
    out.mkdir(parents=True, exist_ok=True)
    min_r = cfg.analysis.min_realizations
    stamp = {"config_hash": table.config_hash, "master_seed": table.master_seed}

    curves, averaged, peak_h = [], {}, {}
    for q in table.quantities:
        per_state = state_curves(table, q, min_r)
        avg = average_over_states(per_state)
        curves += per_state + [avg]
        averaged[q] = avg
        try:
            peak_h[q] = find_peak(avg)
        except ValueError as exc:
            log.warning("no averaged peak for %s: %s", q, exc)
    curves_to_csv(curves, out / "curves.csv", **stamp)

    peaks = peak_table(table, [q for q in ("C", "S", "D") if q in table.quantities], min_r)
    peaks.to_csv(out / "peaks.csv")

    dists = {}
    for q in table.quantities:
        dists[q] = {}
        for hi in _distribution_points(cfg, table.h_grid, peak_h):
            try:
                avg, _ = fit_state_averaged(table, q, hi, points=cfg.analysis.kde_points)
            except InsufficientDataError as exc:
                log.warning("no distribution for %s at h=%g: %s", q, table.h_grid[hi], exc)
                continue
            dists[q][repr(float(table.h_grid[hi]))] = avg.to_dict()

    write_json(out / "figures.json", {
        **stamp,
        "h": table.h_grid,
        "mean_curves": {q: c.to_dict() for q, c in averaged.items()},
        "state_curves": [c.to_dict() for c in curves if c.state is not None],
        "averaged_peaks": peak_h,
        "peak_table": peaks.to_dict(),
        "distributions": dists,
    })
    write_json(out / "analysis_manifest.json", {
        "command": "analyze", **stamp, "table": str(args.table),
        "min_realizations": min_r, "notes": peaks.notes, "versions": _versions(),
    })
    for q, h in peak_h.items():
        print(f"{q}: averaged spread peaks at h/J1 = {h:g}")
    return EXIT_OK


# -- estimate --------------------------------------------------------------


def cmd_estimate(args) -> int:
    from .inference import draws_to_csv, gibbs_run, summarize
    from .statistics import PeakTable

    cfg = _config(args)
    try:
        peaks = PeakTable.from_csv(args.peaks)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read peak table {args.peaks}: {exc}", EXIT_COMPUTE) from exc
    y = peaks.complete()
    dropped = len(peaks.states) - y.shape[1]
    if y.shape[1] == 0:
        raise CommandError("no initial state has a complete set of peaks", EXIT_COMPUTE)
    if dropped:
        log.warning("dropped %d state(s) with missing peaks", dropped)
    est = cfg.estimate
    seed = est.seed if args.seed is None else args.seed
    out = _out_dir(args, cfg) if args.out or args.config else Path(args.peaks).parent
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    samples = gibbs_run(y, chains=est.chains, iterations=est.iterations, burn_in=est.burn_in,
                        thin=est.thin, seed=seed, tau_cap=est.tau_cap,
                        group_names=peaks.quantities)
    report = summarize(samples)
    report.update({"config_hash": peaks.config_hash, "peak_table": str(args.peaks),
                   "states_used": y.shape[1], "states_dropped": dropped,
                   "wall_time_s": round(time.perf_counter() - start, 3),
                   "versions": _versions()})
    draws_to_csv(samples, out / "posterior_draws.csv", peaks.config_hash)
    write_json(out / "estimate.json", report)
    mu = report["parameters"]["mu"]
    print(f"mu: mode {mu['mode']:.3f}, mean {mu['mean']:.3f}, "
          f"95% [{mu['ci95'][0]:.3f}, {mu['ci95'][1]:.3f}]; converged={report['converged']}")
    if not report["converged"] and not args.allow_unconverged:
        raise CommandError("chains did not converge (R-hat >= 1.01)", EXIT_UNCONVERGED)
    return EXIT_OK


# -- calibrate -------------------------------------------------------------


def cmd_calibrate(args) -> int:
    from . import rng
    from .calibration import StaircasePlan, iterate_calibration, random_offsets_mhz
    from .hamiltonian import ModelSpec

    cfg = _config(args)
    cal = cfg.calibration
    out = _out_dir(args, cfg)
    digest = cfg.config_hash()
    seed = cal.seed if args.seed is None else args.seed
    gen = rng.stream(seed, "calibration")
    model = cfg.model
    spec = ModelSpec.uniform(cal.n_sites, j1=float(model._to_j1(model.j1))
                             if np.ndim(model.j1) == 0 else 1.0,
                             j2=float(model._to_j1(model.j2)) if np.ndim(model.j2) == 0
                             else float(np.mean(model._to_j1(model.j2))))
    plan = StaircasePlan.from_mhz(cal.n_sites, cal.step_mhz, cal.times.values())
    truth = np.asarray(cal.offsets_mhz, dtype=float) if cal.offsets_mhz is not None \
        else random_offsets_mhz(cal.n_sites, cal.max_offset_mhz, gen)
    history = iterate_calibration(spec, plan, truth, cal.rounds, gen,
                                  trace_noise=cal.trace_noise,
                                  correction_error=cal.correction_error)
    rounds = []
    with open(out / "calibration.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", "seed", "round", "site", "offset_mhz", "estimate_mhz",
                    "error_mhz", "residual_after_mhz"])
        for k, rd in enumerate(history):
            err = rd.estimate.offsets_mhz - rd.residual_before_mhz
            for site in range(cal.n_sites):
                w.writerow([digest, seed, k, site, repr(float(rd.residual_before_mhz[site])),
                            repr(float(rd.estimate.offsets_mhz[site])), repr(float(err[site])),
                            repr(float(rd.residual_after_mhz[site]))])
            rounds.append({
                "round": k,
                "max_offset_mhz": float(np.abs(rd.residual_before_mhz).max()),
                "max_fit_error_mhz": float(np.abs(err).max()),
                "max_residual_after_mhz": float(np.abs(rd.residual_after_mhz).max()),
                "cost": rd.estimate.cost,
                "evaluations": rd.estimate.evaluations,
                "status": "ok" if rd.estimate.converged else "warning",
                "message": rd.estimate.message,
            })
    write_json(out / "calibration.json", {
        "command": "calibrate", "config_hash": digest, "seed": seed,
        "n_sites": cal.n_sites, "step_mhz": cal.step_mhz, "rounds": rounds,
        "status": "ok" if all(r["status"] == "ok" for r in rounds) else "warning",
        "versions": _versions(),
    })
    for r in rounds:
        print(f"round {r['round']}: max offset {r['max_offset_mhz']:.3f} MHz, "
              f"fit error {r['max_fit_error_mhz']:.2e} MHz, "
              f"residual after {r['max_residual_after_mhz']:.3f} MHz [{r['status']}]")
    return EXIT_OK


# -- units -----------------------------------------------------------------

_CONVERSIONS = {
    ("ns", "J1t"): units.ns_to_j1t,
    ("J1t", "ns"): units.j1t_to_ns,
    ("MHz", "J1"): units.mhz_to_j1,
    ("J1", "MHz"): units.j1_to_mhz,
}


def cmd_units(args) -> int:
    key = (args.from_unit, args.to_unit)
    if key not in _CONVERSIONS:
        pairs = ", ".join(f"{a}->{b}" for a, b in _CONVERSIONS)
        raise CommandError(f"unsupported conversion {key[0]}->{key[1]} (have {pairs})",
                           EXIT_CONFIG)
    for v in args.values:
        print(f"{v:g} {args.from_unit} = {_CONVERSIONS[key](v):.6g} {args.to_unit}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mblprobe", description=__doc__.splitlines()[0] or None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run the disorder sweep and write the ensemble table")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int, help="override plan.master_seed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="reduce an ensemble table to curves, peaks, figure data")
    p.add_argument("--table", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--ignore-hash", action="store_true",
                   help="accept a table produced by a different config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("estimate", help="hierarchical Gibbs fusion of a peak table")
    p.add_argument("--peaks", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override estimate.seed")
    p.add_argument("--allow-unconverged", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="inject offsets, fit them back, report residuals")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override calibration.seed")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("units", help="convert between device and J1 units")
    p.add_argument("values", type=float, nargs="+")
    p.add_argument("--from", dest="from_unit", required=True)
    p.add_argument("--to", dest="to_unit", required=True)
    p.set_defaults(func=cmd_units)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
