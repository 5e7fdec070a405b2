"""Command-line entry points.

Exit status: 0 success, 1 usage error, 2 bad input data, 3 numerical
failure. Files written by a failing command are removed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .estimator import FistaConfig, fit as fit_model
from .exceptions import CalibrationError, DataError, ParameterError, ShapeError
from .io import (
    RunConfig,
    distances_for,
    ingest_csv,
    load_config,
    load_distance_matrix,
    load_locations,
    write_cusum_csv,
    write_json,
    write_long_csv,
)
from .localizer import localize
from .monitor import (
    CusumConfig,
    LambdaGrid,
    Phase1Stats,
    Pipeline,
    _moments,
    _reference_scale,
    _year_statistics,
    bootstrap_stream,
    calibrate_limit,
    monitor_run,
    resolve_allowance,
)
from .operators import BasisSet, DifferenceSet, gaussian_kernel_basis, select_bandwidth
from . import simlab, states
from .validation import seed_sequence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class _Outputs:
    """Tracks written files so a failed command can remove them."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.paths: List[str] = []
        self._made_dir = False

    def path(self, name: str) -> str:
        if not os.path.isdir(self.out_dir):
            os.makedirs(self.out_dir)
            self._made_dir = True
        p = os.path.join(self.out_dir, name)
        self.paths.append(p)
        return p

    def remove(self) -> None:
        for p in self.paths:
            if os.path.exists(p):
                os.remove(p)
        if self._made_dir and not os.listdir(self.out_dir):
            os.rmdir(self.out_dir)


# --- shared helpers -----------------------------------------------------------


def _load_data(cfg: RunConfig):
    if cfg.data is None:
        raise UsageError("--data is required")
    kept = None if cfg.weeks_kept in (None, "all") else int(cfg.weeks_kept)
    y, labels, years, report = ingest_csv(cfg.data, kept, cfg.pad)
    if cfg.flip_sign:
        y = -y
    return y, labels, years, report


def _distances(cfg: RunConfig, labels):
    if cfg.distances:
        return load_distance_matrix(cfg.distances, labels)
    locs = load_locations(cfg.locations) if cfg.locations else None
    return distances_for(labels, locs)


def _bandwidth(cfg: RunConfig, y, dist) -> float:
    if cfg.bandwidth is not None:
        return float(cfg.bandwidth)
    c, _ = select_bandwidth(y, dist, cfg.bandwidth_grid, random_state=cfg.seed)
    return c


def _pipeline(kernel: np.ndarray, n2: int, cfg: RunConfig) -> Pipeline:
    mean = BasisSet(kernel, np.eye(n2), np.eye(1), role="mean")
    return Pipeline(mean, ridge=(cfg.spatial_ridge, None, None), window=cfg.window)


def _in_control_bootstrap(y: np.ndarray, depth: int):
    """In-control generator: phase-I mean plus resampled deviation cells.

    In control every year shares one background, so the year-wise mean
    estimates it and deviations from that mean, inflated by
    ``sqrt(n / (n - 1))``, carry the noise level.
    """
    n3 = y.shape[2]
    if n3 < 2:
        raise ParameterError("the in-control generator needs at least two phase-I years")
    mean = y.mean(axis=2)
    dev = ((y - mean[:, :, None]) * np.sqrt(n3 / (n3 - 1.0))).ravel()

    def draw(rng: np.random.Generator) -> np.ndarray:
        base = np.repeat(mean[:, :, None], depth, axis=2)
        return base + dev[rng.integers(0, dev.size, size=base.size)].reshape(base.shape)

    return draw


# --- subcommands --------------------------------------------------------------


def cmd_fit(cfg: RunConfig, out: _Outputs) -> int:
    y, labels, years, _ = _load_data(cfg)
    dist = _distances(cfg, labels)
    c = _bandwidth(cfg, y, dist)
    mean = BasisSet(gaussian_kernel_basis(dist, c), np.eye(y.shape[1]), np.eye(y.shape[2]), role="mean")
    hot = BasisSet.identity(y.shape)
    d = DifferenceSet.standard(y.shape)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fit_model(y, mean, hot, d, cfg.lambda1, cfg.lambda2, FistaConfig(), ridge=(cfg.spatial_ridge, None, None))
    write_long_csv(out.path("theta_h.csv"), res.theta_h, labels, years, value_name="value")
    write_long_csv(out.path("residual.csv"), res.residual, labels, years, value_name="value")
    write_json(
        out.path("objective.json"),
        {
            "objective": res.objective,
            "lambda1": res.lambda1,
            "lambda2": res.lambda2,
            "bandwidth": c,
            "iterations": res.iterations_used,
            "converged": res.converged,
            "inner_converged": res.inner_converged,
            "warnings": [str(w.message) for w in caught],
        },
    )
    return EXIT_OK


def calibrate_from_data(y: np.ndarray, labels, cfg: RunConfig, depth: int = 2) -> dict:
    """Phase-I moments and control limit from in-control data; returns the calibration document."""
    k = y.shape[2] if cfg.phase1_years is None else cfg.phase1_years
    if not 1 <= k <= y.shape[2]:
        raise ParameterError(f"phase1_years must lie in 1..{y.shape[2]}")
    phase1 = y[:, :, :k]
    dist = _distances(cfg, labels)
    c = _bandwidth(cfg, phase1, dist)
    pipe = _pipeline(gaussian_kernel_basis(dist, c), y.shape[1], cfg)
    gen = _in_control_bootstrap(phase1, depth)
    if cfg.reps < 30:
        raise ParameterError(f"phase-I calibration needs at least 30 replications, got {cfg.reps}")
    ss = seed_sequence(cfg.seed)
    runs = [gen(np.random.default_rng(child)) for child in ss.spawn(cfg.reps)]
    grid = LambdaGrid.scaled(_reference_scale(runs, pipe), cfg.lambda1_factors, cfg.lambda2_factors)
    samples = np.concatenate([_year_statistics(r, pipe, grid, range(1, depth + 1)) for r in runs], axis=0)
    stats = _moments(grid, samples)
    tilde = np.max(stats.standardize(samples), axis=1)
    if not np.isfinite(tilde).any():
        raise CalibrationError("no usable grid pair in phase-I data")
    d = resolve_allowance(cfg.d, tilde)
    limit = calibrate_limit(
        bootstrap_stream(tilde), CusumConfig(d=d, target_arl0=cfg.target_arl0),
        reps=cfg.calibration_reps, seed=cfg.seed,
    )
    doc = stats.to_dict()
    doc.update(
        d=d, L=limit, target_arl0=cfg.target_arl0, seed=cfg.seed, reps=cfg.reps,
        bandwidth=c, spatial_ridge=cfg.spatial_ridge, window=cfg.window,
        weeks_kept=cfg.weeks_kept, labels=list(labels),
    )
    return doc


def cmd_calibrate(cfg: RunConfig, out: _Outputs) -> int:
    y, labels, _, _ = _load_data(cfg)
    doc = calibrate_from_data(y, labels, cfg)
    write_json(out.path("calibration.json"), doc)
    return EXIT_OK


def load_calibration(path: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
        stats = Phase1Stats.from_dict(doc)
        cusum = CusumConfig(d=float(doc["d"]), L_limit=float(doc["L"]), target_arl0=float(doc["target_arl0"]))
    except OSError as exc:
        raise DataError(f"cannot read calibration {path}: {exc}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"calibration {path} is malformed: {exc}") from exc
    return doc, stats, cusum


def run_monitor(y: np.ndarray, labels, cfg: RunConfig, doc: dict, stats: Phase1Stats, cusum: CusumConfig):
    """Monitoring as done by the ``monitor`` command, without file output.

    The chart stops at the first signal unless ``cfg.stop_at_signal`` is false.
    """
    if list(doc.get("labels", labels)) != list(labels):
        raise DataError("units in the data differ from those used for calibration")
    dist = _distances(cfg, labels)
    run_cfg = replace(cfg, spatial_ridge=doc.get("spatial_ridge", cfg.spatial_ridge), window=doc.get("window"))
    pipe = _pipeline(gaussian_kernel_basis(dist, float(doc["bandwidth"])), y.shape[1], run_cfg)
    return monitor_run(y, pipe, stats, cusum, stop_at_signal=cfg.stop_at_signal)


def cmd_monitor(cfg: RunConfig, out: _Outputs) -> int:
    if cfg.calibration is None:
        raise UsageError("--calibration is required")
    doc, stats, cusum = load_calibration(cfg.calibration)
    y, labels, years, _ = _load_data(cfg)
    res = run_monitor(y, labels, cfg, doc, stats, cusum)
    w_path = out.path("cusum.csv")
    write_cusum_csv(w_path, res.state.history, cusum.L_limit)
    cells_path = None
    if res.t_star is not None:
        rep = localize(res.fit, res.t_star, res.winner, year_offset=res.first_year - 1)
        cells_path = out.path("hotspots.csv")
        label = years[res.t_star - 1]
        rep.write_csv(cells_path, labels, year_label=label)
        rep.write_json(out.path("hotspots.json"), labels, year_label=label)
    write_json(
        out.path("detection.json"),
        {
            "t_star": res.t_star,
            "t_star_label": None if res.t_star is None else years[res.t_star - 1],
            "winner_lambda1": None if res.winner is None else res.winner[0],
            "winner_lambda2": None if res.winner is None else res.winner[1],
            "W_series_path": w_path,
            "cells_path": cells_path,
        },
    )
    return EXIT_OK


def _parse_weeks(text: str) -> List[int]:
    weeks = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-")
            weeks.extend(range(int(a), int(b) + 1))
        elif part:
            weeks.append(int(part))
    return weeks


def _sim_config(args) -> simlab.SimConfig:
    hot = None
    if args.hot_states is not None or args.hot_weeks is not None:
        codes = args.hot_states.split(",") if args.hot_states else list(states.BENCHMARK_HOT_STATES)
        weeks = _parse_weeks(args.hot_weeks) if args.hot_weeks else list(states.BENCHMARK_HOT_WEEKS)
        try:
            hot = tuple((states.state_index(c.strip()), w) for c in codes for w in weeks)
        except KeyError as exc:
            raise UsageError(f"unknown state code {exc.args[0]!r}") from None
    return simlab.SimConfig(
        n1=args.n1, n2=args.n2, T=args.T, tau=args.tau, delta=args.delta,
        sigma=args.sigma, hot_cells=hot, trend=args.trend, seed=args.seed,
    )


def cmd_simulate(args, out: _Outputs) -> int:
    sim = _sim_config(args)
    y = simlab.generate(sim)
    labels = [code for code, *_ in states.STATES[: sim.n1]]
    write_long_csv(out.path(args.out), y, labels)
    return EXIT_OK


def cmd_benchmark(args, out: _Outputs) -> int:
    methods = []
    for name in args.methods.split(","):
        name = name.strip().lower()
        if name == "ssr":
            methods.append(simlab.SSRMethod(target_arl0=args.target_arl0))
        elif name == "shewhart":
            methods.append(simlab.ShewhartAblation(target_arl0=args.target_arl0))
        elif name == "t2":
            methods.append(simlab.T2Method(target_arl0=args.target_arl0, draws=args.draws))
        elif name == "pca":
            methods.append(simlab.PCAMethod(target_arl0=args.target_arl0, draws=args.draws))
        else:
            raise UsageError(f"unknown method {name!r}; choose from ssr, shewhart, t2, pca")
    results = []
    for delta in args.deltas:
        sim = replace(_sim_config(args), delta=delta)
        results.append(simlab.benchmark(sim, methods, args.reps, seed=args.seed))
    rows = [r for res in results for r in res.rows]
    simlab.BenchmarkResult(rows, {}, {}, args.reps, args.seed).write_csv(out.path(args.out))
    return EXIT_OK


# --- parser -------------------------------------------------------------------


_CONFIG_KEYS = (
    "data", "distances", "locations", "out_dir", "weeks_kept", "pad", "flip_sign", "bandwidth",
    "spatial_ridge", "lambda1", "lambda2", "d", "target_arl0", "phase1_years", "reps",
    "calibration_reps", "window", "calibration", "stop_at_signal", "seed",
)


def _weeks_kept(v: str):
    return "all" if v == "all" else int(v)


def _allowance(v: str):
    return v if v == "auto" else float(v)


def _add_run_flags(p: argparse.ArgumentParser, extra=()) -> None:
    p.add_argument("--config", help="flat JSON file; flags override its keys")
    p.add_argument("--data", help="input CSV (unit,year,week,cumulative_count or count)")
    p.add_argument("--distances", help="n x n distance CSV with a header row of unit labels")
    p.add_argument("--locations", help="CSV of unit,lat,lon, used when --distances is absent (default: built-in state centroids)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--weeks-kept", dest="weeks_kept", type=_weeks_kept, help="weekly values kept per year, or 'all'")
    p.add_argument("--pad", action="store_const", const=True, default=None)
    p.add_argument("--flip-sign", dest="flip_sign", action="store_const", const=True, default=None,
                   help="negate the data to monitor downward shifts")
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth in km (default: cross-validated)")
    p.add_argument("--spatial-ridge", dest="spatial_ridge", type=float)
    p.add_argument("--seed", type=int)
    if "lambda" in extra:
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
    if "calib" in extra:
        p.add_argument("--d", type=_allowance)
        p.add_argument("--target-arl0", dest="target_arl0", type=float)
        p.add_argument("--phase1-years", dest="phase1_years", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--calibration-reps", dest="calibration_reps", type=int)
        p.add_argument("--window", type=int)
    if "monitor" in extra:
        p.add_argument("--calibration", help="calibration JSON written by `calibrate`")
        p.add_argument("--chart-all", dest="stop_at_signal", action="store_const", const=False, default=None,
                       help="keep charting after the first signal")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n1", type=int, default=50)
    p.add_argument("--n2", type=int, default=51)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--tau", type=int, default=50)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--trend", type=float, default=0.0)
    p.add_argument("--hot-states", dest="hot_states", help="comma-separated state codes")
    p.add_argument("--hot-weeks", dest="hot_weeks", help="week list such as 1-10,41-51")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hotspot-tensor", description="Spatio-temporal hot-spot detection.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="decompose a dataset at one penalty pair")
    _add_run_flags(p, ("lambda",))
    p = sub.add_parser("calibrate", help="phase-I moments and CUSUM limit from in-control data")
    _add_run_flags(p, ("calib",))
    p = sub.add_parser("monitor", help="run the CUSUM chart and localize the signal")
    _add_run_flags(p, ("monitor",))

    p = sub.add_parser("simulate", help="write a simulated dataset")
    _add_sim_flags(p)
    p.add_argument("--out", default="simulated.csv")

    p = sub.add_parser("benchmark", help="compare methods on simulated replications")
    _add_sim_flags(p)
    p.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.5])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--methods", default="ssr,t2,pca")
    p.add_argument("--target-arl0", dest="target_arl0", type=float, default=200.0)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--out", default="benchmark.csv")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    out = None
    try:
        args = parser.parse_args(argv)
        if args.command in ("fit", "calibrate", "monitor"):
            overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
            cfg = load_config(args.config, overrides).validate()
            out = _Outputs(cfg.out_dir)
            handler = {"fit": cmd_fit, "calibrate": cmd_calibrate, "monitor": cmd_monitor}[args.command]
            return handler(cfg, out)
        out = _Outputs(args.out_dir)
        return {"simulate": cmd_simulate, "benchmark": cmd_benchmark}[args.command](args, out)
    except UsageError as exc:
        _fail(out, f"usage error: {exc}")
        return EXIT_USAGE
    except (ParameterError, TypeError) as exc:
        _fail(out, f"invalid configuration: {exc}")
        return EXIT_USAGE
    except (DataError, ShapeError, OSError) as exc:
        _fail(out, f"data error: {exc}")
        return EXIT_DATA
    except (ArithmeticError, CalibrationError, ValueError, np.linalg.LinAlgError) as exc:
        _fail(out, f"numerical failure: {exc}")
        return EXIT_NUMERIC


def _fail(out: Optional[_Outputs], message: str) -> None:
    if out is not None:
        out.remove()
    print(message, file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
