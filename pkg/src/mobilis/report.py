"""Figure-data emission: one gnuplot-ready .dat + .gp pair per figure analogue."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pandas as pd

from .errors import DataError
from .fitting import ExponentialModel, TruncatedPowerLawModel, model_pdf

FIGURES = (
    "fig1_hourly_density",
    "fig2_mean_dt_histogram",
    "fig3_cohorts_dt",
    "fig4_curves_dt",
    "fig5_histogram_dr",
    "fig6_curves_dr",
)

_REQUIRED = {
    "fig1_hourly_density": ["density.csv"],
    "fig2_mean_dt_histogram": ["histogram_mean_dt.csv"],
    "fig3_cohorts_dt": ["cohorts_dt.csv"],
    "fig4_curves_dt": ["curves_dt.csv"],
    "fig5_histogram_dr": ["histogram_dr.csv", "summary.json"],
    "fig6_curves_dr": ["curves_dr.csv"],
}


def _fmt(v) -> str:
    return repr(float(v))


def _centers(frame: pd.DataFrame) -> pd.Series:
    left = frame["bin_left"]
    right = frame["bin_right"]
    geo = (left > 0) & (right > 0)
    out = 0.5 * (left + right)
    out[geo] = (left[geo] * right[geo]) ** 0.5
    return out


def _load_fit(out_dir: Path, target: str):
    path = out_dir / "fits.json"
    if not path.exists():
        return None
    fits = json.loads(path.read_text())
    entry = fits.get(target)
    if not entry:
        return None
    lo, hi = entry["support"]
    if entry["model"] == "exponential":
        return ExponentialModel(entry["params"]["lambda"], lo, hi)
    return TruncatedPowerLawModel(entry["params"]["beta"], entry["params"]["kappa"],
                                  entry["params"]["r0"], lo, hi)


def _overlay_lines(model, centers) -> list[str]:
    lo, hi = model.support
    lines = ["", "", "# overlay: fitted model pdf"]
    inside = [c for c in centers if lo <= c <= hi and c > 0]
    for c in inside:
        lines.append(f"{_fmt(c)} {_fmt(model_pdf(model, float(c)))}")
    return lines


def _hist_block(frame: pd.DataFrame, header: str) -> list[str]:
    lines = [header]
    centers = _centers(frame)
    for c, row in zip(centers, frame.itertuples()):
        lines.append(f"{_fmt(c)} {_fmt(row.probability)} {_fmt(row.pdf)} {row.count}")
    return lines


def _gp(path_dat: str, title: str, xlabel: str, ylabel: str, extra: str = "",
        logscale: str = "xy") -> str:
    lines = [f'set title "{title}"', f'set xlabel "{xlabel}"', f'set ylabel "{ylabel}"']
    if logscale:
        lines.append(f"set logscale {logscale}")
    if extra:
        lines.append(extra)
    return "\n".join(lines) + "\n"


def emit_figures(out_dir: Path | str) -> list[str]:
    """Write every figure bundle; returns the list of files written."""
    out_dir = Path(out_dir)
    missing = sorted({name for fig, deps in _REQUIRED.items()
                      for name in deps if not (out_dir / name).exists()})
    if missing:
        raise DataError("missing analysis artifacts: " + ", ".join(missing))

    written: list[str] = []

    def write(name: str, content: str) -> None:
        (out_dir / name).write_text(content)
        written.append(name)

    # Fig 1: hourly activity density
    density = pd.read_csv(out_dir / "density.csv")
    lines = ["# hour_index count"]
    lines += [f"{int(r.hour_index)} {int(r.count)}" for r in density.itertuples()]
    write("fig1_hourly_density.dat", "\n".join(lines) + "\n")
    write("fig1_hourly_density.gp",
          _gp("fig1_hourly_density.dat", "Hourly activity density", "hour", "activities",
              extra='plot "fig1_hourly_density.dat" using 1:2 with boxes notitle',
              logscale=""))

    # Fig 2: histogram of per-subscriber mean waiting time
    mean_hist = pd.read_csv(out_dir / "histogram_mean_dt.csv")
    write("fig2_mean_dt_histogram.dat",
          "\n".join(_hist_block(mean_hist, "# center_min probability pdf count")) + "\n")
    write("fig2_mean_dt_histogram.gp",
          _gp("", "Mean inter-event time per subscriber", "mean dt (minutes)", "P",
              extra='plot "fig2_mean_dt_histogram.dat" using 1:2 with histeps notitle'))

    # Fig 3: cohorted waiting-time curves, fitted overlay when available
    cohorts = pd.read_csv(out_dir / "cohorts_dt.csv")
    blocks = []
    labels = list(dict.fromkeys(cohorts["cohort"]))
    for label in labels:
        sub = cohorts[cohorts["cohort"] == label]
        blocks.append("\n".join(_hist_block(sub, f"# cohort {label}: center_min probability pdf count")))
    dt_fit = _load_fit(out_dir, "dt")
    if dt_fit is not None:
        blocks.append("\n".join(_overlay_lines(dt_fit, _centers(cohorts).unique())))
    else:
        print("report: no dt fit found, fig3 emitted without overlay", file=sys.stderr)
    write("fig3_cohorts_dt.dat", "\n\n\n".join(blocks) + "\n")
    write("fig3_cohorts_dt.gp",
          _gp("", "Waiting time distribution by activity cohort", "dt (minutes)", "P(dt)",
              extra='plot for [i=0:*] "fig3_cohorts_dt.dat" index i using 1:2 '
                    'with linespoints title sprintf("cohort %d", i)'))

    # Fig 4 / Fig 6: per-day curves plus the day-average curve
    for fig, src, xlabel in (("fig4_curves_dt", "curves_dt.csv", "dt (minutes)"),
                             ("fig6_curves_dr", "curves_dr.csv", "dr (meters)")):
        curves = pd.read_csv(out_dir / src)
        blocks = []
        for day in sorted(curves["day_index"].unique()):
            sub = curves[curves["day_index"] == day]
            name = "DayAve" if day == -1 else f"day {day}"
            blocks.append("\n".join(_hist_block(sub, f"# {name}: center probability pdf count")))
        write(f"{fig}.dat", "\n\n\n".join(blocks) + "\n")
        write(f"{fig}.gp",
              _gp("", "Per-day distribution curves and their average", xlabel, "P",
                  extra=f'plot for [i=0:*] "{fig}.dat" index i using 1:2 with lines notitle'))

    # Fig 5: displacement distribution with the cutoff marker
    dr_hist = pd.read_csv(out_dir / "histogram_dr.csv")
    summary = json.loads((out_dir / "summary.json").read_text())
    cutoff = summary.get("analyze", {}).get("cutoffs", {}).get("dr_max_obs")
    blocks = ["\n".join(_hist_block(dr_hist, "# center_m probability pdf count"))]
    dr_fit = _load_fit(out_dir, "dr")
    if dr_fit is not None:
        blocks.append("\n".join(_overlay_lines(dr_fit, _centers(dr_hist).unique())))
    else:
        print("report: no dr fit found, fig5 emitted without overlay", file=sys.stderr)
    write("fig5_histogram_dr.dat", "\n\n\n".join(blocks) + "\n")
    marker = ""
    if cutoff:
        marker = f"set arrow from {_fmt(cutoff)}, graph 0 to {_fmt(cutoff)}, graph 1 nohead dt 2\n"
    write("fig5_histogram_dr.gp",
          marker + _gp("", "Displacement distribution", "dr (meters)", "P(dr)",
                       extra='plot "fig5_histogram_dr.dat" index 0 using 1:2 '
                             'with linespoints notitle'))
    return written
