"""Single executable: generate -> ingest -> analyze -> fit -> report."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, DataError, MobilisError, NoDataError
from .fitting import (ExponentialModel, TruncatedPowerLawModel, fit_exponential,
                      fit_histogram_regression, fit_power_law_cutoff, ks_statistic,
                      FitResult)
from .generator import (Arena, GeneratorConfig, TowerGrid, write_population_csv,
                        write_truth_json)
from .ingest import ingest_file
from .pipeline import SAMPLE_DTYPE, AnalyzeConfig, analyze_store
from .records import ObservationWindow, DEFAULT_T_START
from .report import emit_figures
from .store import SubscriberStore
from .trajectory import default_cohorts, parse_cohort_spec


def _parse_range(text: str, name: str) -> tuple[float, float]:
    try:
        lo, hi = text.split("..")
        return float(lo), float(hi)
    except ValueError:
        raise ConfigError(f"bad {name} range {text!r}, expected LO..HI") from None


def _parse_arena(text: str) -> Arena:
    try:
        w, h = text.lower().split("x")
        return Arena(float(w), float(h))
    except (ValueError, TypeError):
        raise ConfigError(f"bad arena {text!r}, expected WIDTHxHEIGHT") from None


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: dict,
                    inputs: dict[str, str], outputs: list[str], started: float) -> None:
    path = out_dir / "manifest.json"
    entries = json.loads(path.read_text()) if path.exists() else []
    entries.append({
        "subcommand": subcommand,
        "config": config,
        "input_digests": inputs,
        "tool_version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 3),
        "outputs": outputs,
    })
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def _merge_summary(out_dir: Path, key: str, value: dict) -> None:
    path = out_dir / "summary.json"
    summary = json.loads(path.read_text()) if path.exists() else {}
    summary[key] = value
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _resolve_seed(args) -> int:
    env = os.environ.get("MOBILIS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"bad MOBILIS_SEED {env!r}") from None
    return args.seed


def _window_from_args(args) -> ObservationWindow:
    if getattr(args, "window", None):
        lo, hi = (int(v) for v in _parse_range(args.window, "window"))
        if (hi - lo) % 86400 == 0:
            return ObservationWindow.from_days(lo, (hi - lo) // 86400)
        # not a whole number of days: single partition
        return ObservationWindow(lo, hi, (lo,))
    return ObservationWindow.from_days(args.t_start, args.days)


def cmd_generate(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _resolve_seed(args)
    window = ObservationWindow.from_days(args.t_start, args.days)
    dt_lo, dt_hi = _parse_range(args.dt_support, "dt-support")
    dr_lo, dr_hi = _parse_range(args.dr_support, "dr-support")
    waiting = ExponentialModel(getattr(args, "lam"), dt_lo, dt_hi)
    steps = TruncatedPowerLawModel(args.beta, args.kappa, args.r0, dr_lo, dr_hi)
    arena = _parse_arena(args.arena)
    towers = None
    if args.towers == "auto":
        towers = TowerGrid.regular(arena, args.tower_spacing)
    elif args.towers not in (None, "none"):
        frame = pd.read_csv(args.towers)
        towers = TowerGrid(frame["x"].to_numpy(), frame["y"].to_numpy(),
                           [str(t) for t in frame["tower_id"]])
    config = GeneratorConfig(args.n, window, waiting, steps, arena, seed, towers)
    truth = write_population_csv(config, out_dir / "cdr.csv", order=args.order)
    write_truth_json(truth, out_dir / "truth.json")
    _write_manifest(out_dir, "generate",
                    {"n": args.n, "days": args.days, "t_start": args.t_start,
                     "lambda": getattr(args, "lam"), "beta": args.beta,
                     "kappa": args.kappa, "r0": args.r0,
                     "dt_support": [dt_lo, dt_hi], "dr_support": [dr_lo, dr_hi],
                     "arena": args.arena, "seed": seed, "towers": args.towers,
                     "order": args.order},
                    {}, ["cdr.csv", "truth.json"], started)
    print(f"generated {truth.n_records} records for {args.n} subscribers "
          f"(single-event fraction {truth.single_event_fraction:.4f})")
    return 0


def cmd_ingest(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    window = _window_from_args(args)
    store = SubscriberStore(out_dir / "store", n_shards=args.shards)
    summary = ingest_file(args.input, window, store, on_error=args.on_error,
                          max_errors=args.max_errors, threads=args.threads)
    store.finalize()
    info = summary.as_dict()
    info["coords"] = args.coords
    info["window"] = {"t_start": window.t_start, "t_end": window.t_end,
                      "n_days": window.n_days}
    _merge_summary(out_dir, "ingest", info)
    _write_manifest(out_dir, "ingest",
                    {"input": str(args.input), "window": [window.t_start, window.t_end],
                     "on_error": args.on_error, "coords": args.coords,
                     "threads": args.threads, "shards": args.shards},
                    {str(args.input): _sha256(Path(args.input))},
                    ["store", "summary.json"], started)
    print(f"ingested {info['accepted']} of {info['total_lines']} lines "
          f"({info['skipped']} skipped, {info['out_of_window']} out of window, "
          f"{info['errors']} errors)")
    return 0


def _load_ingest_summary(out_dir: Path) -> dict:
    path = out_dir / "summary.json"
    if not path.exists():
        raise DataError(f"no summary.json under {out_dir}; run ingest first")
    return json.loads(path.read_text())


def cmd_analyze(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    summary = _load_ingest_summary(out_dir)
    ingest_info = summary.get("ingest", {})
    coords = args.coords or ingest_info.get("coords", "planar")
    w = ingest_info.get("window")
    if w:
        window = ObservationWindow.from_days(w["t_start"], w["n_days"])
    else:
        window = ObservationWindow.default()
    cfg = AnalyzeConfig(
        dt_window=_parse_range(args.dt_window, "dt-window"),
        dr_dt_window=_parse_range(args.dr_window_dt, "dr-window-dt"),
        bins_per_decade=args.bins_per_decade,
        linear_bins=args.linear_bins,
        cohorts=parse_cohort_spec(args.cohorts) if args.cohorts else default_cohorts(),
        coords=coords,
        per_day=args.per_day,
        dump_samples_csv=args.dump_samples,
    )
    store = SubscriberStore.open(out_dir / "store")
    info = analyze_store(store, window, cfg, out_dir, threads=args.threads)
    _merge_summary(out_dir, "analyze", info)
    outputs = ["samples.bin", "histogram_dt.csv", "histogram_dr.csv",
               "histogram_mean_dt.csv", "cohorts_dt.csv", "density.csv", "rg.csv",
               "summary.json"]
    if cfg.per_day:
        outputs += ["curves_dt.csv", "curves_dr.csv"]
    if cfg.dump_samples_csv:
        outputs.append("samples.csv")
    _write_manifest(out_dir, "analyze",
                    {"dt_window": list(cfg.dt_window),
                     "dr_window_dt": list(cfg.dr_dt_window),
                     "bins_per_decade": cfg.bins_per_decade,
                     "linear_bins": cfg.linear_bins, "coords": coords,
                     "per_day": cfg.per_day, "threads": args.threads},
                    {}, outputs, started)
    print(f"analyzed {info['n_trajectories']} trajectories, "
          f"{info['n_samples_total']} samples "
          f"(dt cutoff {info['cutoffs']['dt_max_obs']}, "
          f"dr cutoff {info['cutoffs']['dr_max_obs']})")
    return 0


def cmd_fit(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    samples_path = out_dir / "samples.bin"
    if not samples_path.exists():
        raise DataError(f"no samples.bin under {out_dir}; run analyze first")
    summary = _load_ingest_summary(out_dir)
    analyze_info = summary.get("analyze", {})
    if samples_path.stat().st_size == 0:
        raise NoDataError("empty sample file")
    data = np.memmap(samples_path, dtype=SAMPLE_DTYPE, mode="r")

    cutoffs = analyze_info.get("cutoffs", {})
    if args.target == "dt":
        values = np.asarray(data["dt"])
        default_lo = analyze_info.get("dt_window", [15.0, 1440.0])[0]
        default_hi = cutoffs.get("dt_max_obs") or float(values.max())
    else:
        pair_lo, pair_hi = analyze_info.get("dr_dt_window", [20.0, 1440.0])
        dt = np.asarray(data["dt"])
        values = np.asarray(data["dr"])[(dt >= pair_lo) & (dt <= pair_hi)]
        default_lo = 1.0
        default_hi = cutoffs.get("dr_max_obs") or float(values.max() if len(values) else 0)
    if args.support:
        lo, hi = _parse_range(args.support, "support")
    else:
        lo, hi = default_lo, default_hi
    values = values[(values >= lo) & (values <= hi)]
    if not len(values):
        raise NoDataError("no samples inside the fit support")

    model_kind = args.model or ("exp" if args.target == "dt" else "plc")
    if args.method == "hist":
        from .stats import log_edges, make_histogram
        edges = log_edges(max(lo, 1e-9), hi)
        hist = make_histogram(values, edges, hi)
        family = "exponential" if model_kind == "exp" else "power_law_cutoff"
        model = fit_histogram_regression(hist, family, r0=args.r0)
        result = FitResult(model, len(values), model.log_likelihood(values),
                           float(ks_statistic(values, model)), True, 0)
    elif model_kind == "exp":
        result = fit_exponential(values, (lo, hi))
    else:
        result = fit_power_law_cutoff(values, (lo, hi), r0=args.r0,
                                      r0_free=args.r0_free, fix_beta=args.fix_beta)

    fits_path = out_dir / "fits.json"
    fits = json.loads(fits_path.read_text()) if fits_path.exists() else {}
    fits[args.target] = result.to_json_dict()
    fits_path.write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, "fit",
                    {"target": args.target, "model": model_kind,
                     "support": [lo, hi], "r0": args.r0, "r0_free": args.r0_free,
                     "fix_beta": args.fix_beta, "method": args.method},
                    {}, ["fits.json"], started)
    print(json.dumps(fits[args.target], sort_keys=True))
    return 0


def cmd_report(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    written = emit_figures(out_dir)
    _write_manifest(out_dir, "report", {}, {}, written, started)
    print(f"wrote {len(written)} figure files")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobilis",
        description="CDR mobility analytics: ingest, analyze, fit, generate, report")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic CDR population")
    p.add_argument("--n", type=int, required=True, help="number of subscribers")
    p.add_argument("--days", type=int, default=12)
    p.add_argument("--t-start", type=int, default=DEFAULT_T_START)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01,
                   help="waiting-time rate per minute")
    p.add_argument("--dt-support", default="15..1440", help="waiting-time support, minutes")
    p.add_argument("--beta", type=float, default=1.75)
    p.add_argument("--kappa", type=float, default=1e4, help="cutoff scale, meters")
    p.add_argument("--r0", type=float, default=0.0)
    p.add_argument("--dr-support", default="20..72295.15", help="step-length support, meters")
    p.add_argument("--arena", default="8e4x8e4", help="arena WIDTHxHEIGHT in meters")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--towers", default="none",
                   help="'none', 'auto' (regular grid), or a tower CSV path")
    p.add_argument("--tower-spacing", type=float, default=1000.0)
    p.add_argument("--order", choices=("subscriber", "time"), default="subscriber")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="parse and store a CDR CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--window", help="observation window START..END, epoch seconds")
    p.add_argument("--t-start", type=int, default=DEFAULT_T_START)
    p.add_argument("--days", type=int, default=12)
    p.add_argument("--on-error", choices=("abort", "skip"), default="abort")
    p.add_argument("--max-errors", type=int, default=None)
    p.add_argument("--coords", choices=("planar", "geo"), default="planar")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--shards", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="compute samples, histograms and curves")
    p.add_argument("--out", required=True, help="run directory holding the store")
    p.add_argument("--dt-window", default="15..1440")
    p.add_argument("--dr-window-dt", default="20..1440",
                   help="dt pairing window for displacement samples")
    p.add_argument("--bins-per-decade", type=int, default=50)
    p.add_argument("--linear-bins", type=int, default=None)
    p.add_argument("--cohorts", default=None, help="e.g. 2-10,11-100,101-1000,1001+")
    p.add_argument("--coords", choices=("planar", "geo"), default=None)
    p.add_argument("--per-day", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--dump-samples", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="fit a law to the analyzed samples")
    p.add_argument("--out", required=True)
    p.add_argument("--target", choices=("dt", "dr"), required=True)
    p.add_argument("--model", choices=("exp", "plc"), default=None)
    p.add_argument("--support", default=None, help="LO..HI, defaults to the observed window")
    p.add_argument("--r0", type=float, default=0.0)
    p.add_argument("--r0-free", action="store_true")
    p.add_argument("--fix-beta", type=float, default=None)
    p.add_argument("--method", choices=("mle", "hist"), default="mle")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="emit figure-data bundles")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mobilis: configuration error: {exc}", file=sys.stderr)
        return 2
    except MobilisError as exc:
        print(f"mobilis: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
