"""Streaming analysis over the record store: samples, histograms, curves.

Two passes keep memory bounded by one shard plus the per-subscriber index.
Pass A sorts and deduplicates each shard, emits the raw interval samples to
samples.bin and accumulates per-subscriber sums plus the observed extremes.
Pass B re-reads samples.bin in chunks and bins everything against the
cutoffs fixed by pass A. Shards may be processed concurrently; results are
merged in shard order, so all artifacts are identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import NoDataError
from .records import ObservationWindow
from .stats import CurveFamily, Histogram, linear_edges, log_edges
from .store import SubscriberStore
from .trajectory import (ActivityCohort, default_cohorts, haversine_distance,
                         validate_cohort_spec)

SAMPLE_DTYPE = np.dtype([("sub", "<i4"), ("day", "<i2"), ("dt", "<f8"), ("dr", "<f8")])
SAMPLE_CHUNK = 1 << 20


@dataclass
class AnalyzeConfig:
    dt_window: tuple[float, float] = (15.0, 1440.0)
    dr_dt_window: tuple[float, float] = (20.0, 1440.0)
    bins_per_decade: int = 50
    linear_bins: int | None = None
    dr_zero_edge: float = 1.0      # left edge of the first positive dr bin
    cohorts: list[ActivityCohort] = field(default_factory=default_cohorts)
    coords: str = "planar"
    per_day: bool = True
    dump_samples_csv: bool = False


@dataclass
class _ShardProduct:
    n_events: int = 0
    n_duplicates: int = 0
    samples: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=SAMPLE_DTYPE))
    hourly: np.ndarray | None = None
    sub_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    event_counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rg: np.ndarray = field(default_factory=lambda: np.empty(0))
    adm_sub: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    adm_sum: np.ndarray = field(default_factory=lambda: np.empty(0))
    adm_count: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dt_pre: tuple[float, float] | None = None      # unfiltered dt extremes
    dr_pre: tuple[float, float] | None = None
    dt_adm_max: float | None = None
    dt_adm_min: float | None = None
    dr_adm_max: float | None = None
    dr_adm_min: float | None = None


def _pair_distances(x: np.ndarray, y: np.ndarray, coords: str) -> np.ndarray:
    if coords == "geo":
        return np.asarray(haversine_distance(x[:-1], y[:-1], x[1:], y[1:]))
    return np.hypot(np.diff(x), np.diff(y))


def _process_shard(store: SubscriberStore, window: ObservationWindow,
                   cfg: AnalyzeConfig, rank: np.ndarray, k: int) -> _ShardProduct:
    arr = store.read_shard(k)
    out = _ShardProduct()
    if not len(arr):
        return out
    order = np.lexsort((rank[arr["tower"]], arr["t"], arr["sub"]))
    arr = arr[order]
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = ((arr["sub"][1:] != arr["sub"][:-1])
                | (arr["t"][1:] != arr["t"][:-1])
                | (arr["tower"][1:] != arr["tower"][:-1]))
    out.n_duplicates = int((~keep).sum())
    arr = arr[keep]
    out.n_events = len(arr)

    t = arr["t"]
    x = arr["x"]
    y = arr["y"]
    sub = arr["sub"].astype(np.int64)
    out.hourly = np.bincount(
        np.clip((t - window.t_start) // 3600, 0, window.n_hours - 1),
        minlength=window.n_hours)

    starts = np.flatnonzero(np.r_[True, sub[1:] != sub[:-1]])
    bounds = np.r_[starts, len(sub)]
    counts = np.diff(bounds)
    out.sub_ids = sub[starts]
    out.event_counts = counts

    # radius of gyration, centered per subscriber to avoid cancellation
    seg = np.repeat(np.arange(len(counts)), counts)
    if cfg.coords == "geo":
        from .trajectory import EARTH_RADIUS_M
        lat0 = np.add.reduceat(y, starts) / counts
        px = np.radians(x) * EARTH_RADIUS_M * np.cos(np.radians(lat0))[seg]
        py = np.radians(y) * EARTH_RADIUS_M
    else:
        px, py = x, y
    cx = np.add.reduceat(px, starts) / counts
    cy = np.add.reduceat(py, starts) / counts
    dx = px - cx[seg]
    dy = py - cy[seg]
    out.rg = np.sqrt(np.add.reduceat(dx * dx + dy * dy, starts) / counts)

    pair_ok = sub[1:] == sub[:-1]
    if not pair_ok.any():
        return out
    dt = (np.diff(t) / 60.0)[pair_ok]
    dr = _pair_distances(x, y, cfg.coords)[pair_ok]
    day = np.clip(np.searchsorted(window.day_boundaries, t[:-1][pair_ok],
                                  side="right") - 1, 0, window.n_days - 1)
    psub = sub[:-1][pair_ok]

    samples = np.empty(len(dt), dtype=SAMPLE_DTYPE)
    samples["sub"] = psub
    samples["day"] = day
    samples["dt"] = dt
    samples["dr"] = dr
    out.samples = samples

    out.dt_pre = (float(dt.min()), float(dt.max()))
    out.dr_pre = (float(dr.min()), float(dr.max()))

    lo, hi = cfg.dt_window
    m_dt = (dt >= lo) & (dt <= hi)
    if m_dt.any():
        adm = dt[m_dt]
        out.dt_adm_max = float(adm.max())
        out.dt_adm_min = float(adm.min())
        s = psub[m_dt]
        b = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
        out.adm_sub = s[b]
        out.adm_sum = np.add.reduceat(adm, b)
        out.adm_count = np.diff(np.r_[b, len(s)])
    dlo, dhi = cfg.dr_dt_window
    m_dr = (dt >= dlo) & (dt <= dhi)
    if m_dr.any():
        out.dr_adm_max = float(dr[m_dr].max())
        out.dr_adm_min = float(dr[m_dr].min())
    return out


def _fmt(v) -> str:
    return repr(float(v))


def _write_histogram_csv(path: Path, hist: Histogram) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("bin_left,bin_right,count,probability,pdf\n")
        for i in range(len(hist.counts)):
            f.write(f"{_fmt(hist.bin_edges[i])},{_fmt(hist.bin_edges[i + 1])},"
                    f"{hist.counts[i]},{_fmt(hist.probabilities[i])},{_fmt(hist.pdf[i])}\n")


def _write_curves_csv(path: Path, family: CurveFamily) -> None:
    edges = family.bin_edges
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("day_index,bin_left,bin_right,count,probability,pdf\n")
        for d, hist in enumerate(family.per_day):
            for i in range(len(hist.counts)):
                f.write(f"{d},{_fmt(edges[i])},{_fmt(edges[i + 1])},{hist.counts[i]},"
                        f"{_fmt(hist.probabilities[i])},{_fmt(hist.pdf[i])}\n")
        widths = np.diff(edges)
        total = sum(h.counts for h in family.per_day)
        for i in range(len(edges) - 1):
            avg = family.day_average[i]
            f.write(f"-1,{_fmt(edges[i])},{_fmt(edges[i + 1])},{total[i]},"
                    f"{_fmt(avg)},{_fmt(avg / widths[i])}\n")


def _write_labeled_curves_csv(path: Path, labels: list[str], hists: list[Histogram],
                              first_col: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{first_col},bin_left,bin_right,count,probability,pdf\n")
        for label, hist in zip(labels, hists):
            for i in range(len(hist.counts)):
                f.write(f"{label},{_fmt(hist.bin_edges[i])},{_fmt(hist.bin_edges[i + 1])},"
                        f"{hist.counts[i]},{_fmt(hist.probabilities[i])},{_fmt(hist.pdf[i])}\n")


def _bin_counts(values: np.ndarray, group: np.ndarray, n_groups: int,
                edges: np.ndarray, cutoff: float):
    """Per-group in-bin counts plus below/above/cutoff counters."""
    nb = len(edges) - 1
    at_cut = values >= cutoff
    in_range = (~at_cut) & (values >= edges[0]) & (values <= edges[-1])
    below = (~at_cut) & (values < edges[0])
    above = (~at_cut) & (values > edges[-1])
    idx = np.minimum(np.searchsorted(edges, values[in_range], side="right") - 1, nb - 1)
    flat = group[in_range] * nb + idx
    counts = np.bincount(flat, minlength=n_groups * nb).reshape(n_groups, nb)
    per_group = [np.bincount(group[m], minlength=n_groups)
                 for m in (at_cut, below, above)]
    return counts, per_group[0], per_group[1], per_group[2]


class _HistAccumulator:
    def __init__(self, n_groups: int, edges: np.ndarray, cutoff: float):
        self.edges = edges
        self.cutoff = cutoff
        self.n_groups = n_groups
        nb = len(edges) - 1
        self.counts = np.zeros((n_groups, nb), dtype=np.int64)
        self.n_cutoff = np.zeros(n_groups, dtype=np.int64)
        self.n_below = np.zeros(n_groups, dtype=np.int64)
        self.n_above = np.zeros(n_groups, dtype=np.int64)

    def add(self, values: np.ndarray, group: np.ndarray) -> None:
        counts, cut, below, above = _bin_counts(values, group, self.n_groups,
                                                self.edges, self.cutoff)
        self.counts += counts
        self.n_cutoff += cut
        self.n_below += below
        self.n_above += above

    def histogram(self, g: int) -> Histogram:
        return Histogram(self.edges, self.counts[g], self.cutoff,
                         int(self.n_cutoff[g]), int(self.n_below[g]),
                         int(self.n_above[g]))

    def pooled(self) -> Histogram:
        return Histogram(self.edges, self.counts.sum(axis=0), self.cutoff,
                         int(self.n_cutoff.sum()), int(self.n_below.sum()),
                         int(self.n_above.sum()))

    def family(self) -> CurveFamily:
        per_day = [self.histogram(g) for g in range(self.n_groups)]
        day_average = np.mean([h.probabilities for h in per_day], axis=0)
        empty = [d for d, h in enumerate(per_day) if h.total == 0]
        return CurveFamily(per_day, day_average, empty)


def analyze_store(store: SubscriberStore, window: ObservationWindow,
                  cfg: AnalyzeConfig, out_dir: Path | str, threads: int = 1) -> dict:
    """Run the full analysis, writing all artifacts under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cohorts = validate_cohort_spec(cfg.cohorts)
    rank = store.tower_rank()
    n_subs = store.n_subscribers

    event_counts = np.zeros(n_subs, dtype=np.int64)
    rg_values = np.zeros(n_subs)
    dt_sum = np.zeros(n_subs)
    dt_count = np.zeros(n_subs, dtype=np.int64)
    hourly = np.zeros(window.n_hours, dtype=np.int64)
    n_events = n_duplicates = n_samples = 0
    dt_pre = [np.inf, -np.inf]
    dr_pre = [np.inf, -np.inf]
    dt_adm = [np.inf, -np.inf]
    dr_adm = [np.inf, -np.inf]

    samples_path = out_dir / "samples.bin"
    with open(samples_path, "wb") as sample_file:
        def consume(prod: _ShardProduct) -> None:
            nonlocal n_events, n_duplicates, n_samples
            n_events += prod.n_events
            n_duplicates += prod.n_duplicates
            if prod.hourly is not None:
                hourly[:] += prod.hourly
            if len(prod.sub_ids):
                event_counts[prod.sub_ids] = prod.event_counts
                rg_values[prod.sub_ids] = prod.rg
            if len(prod.adm_sub):
                dt_sum[prod.adm_sub] += prod.adm_sum
                dt_count[prod.adm_sub] += prod.adm_count
            if len(prod.samples):
                sample_file.write(prod.samples.tobytes())
                n_samples += len(prod.samples)
            if prod.dt_pre:
                dt_pre[0] = min(dt_pre[0], prod.dt_pre[0])
                dt_pre[1] = max(dt_pre[1], prod.dt_pre[1])
                dr_pre[0] = min(dr_pre[0], prod.dr_pre[0])
                dr_pre[1] = max(dr_pre[1], prod.dr_pre[1])
            if prod.dt_adm_max is not None:
                dt_adm[0] = min(dt_adm[0], prod.dt_adm_min)
                dt_adm[1] = max(dt_adm[1], prod.dt_adm_max)
            if prod.dr_adm_max is not None:
                dr_adm[0] = min(dr_adm[0], prod.dr_adm_min)
                dr_adm[1] = max(dr_adm[1], prod.dr_adm_max)

        if threads <= 1:
            for k in range(store.n_shards):
                consume(_process_shard(store, window, cfg, rank, k))
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for prod in pool.map(
                        lambda k: _process_shard(store, window, cfg, rank, k),
                        range(store.n_shards)):
                    consume(prod)

    if not np.isfinite(dt_adm[1]) or dt_count.sum() == 0:
        raise NoDataError("no admitted waiting-time samples")
    dt_cutoff = dt_adm[1]
    dr_cutoff = dr_adm[1] if np.isfinite(dr_adm[1]) else 0.0

    dt_lo = cfg.dt_window[0]
    # a degenerate all-zero displacement run still gets one [0, 1) bin that
    # keeps the zero mass countable
    dr_degenerate = dr_cutoff <= 0
    dr_hist_cutoff = 1.0 if dr_degenerate else dr_cutoff
    if cfg.linear_bins:
        dt_edges = linear_edges(dt_lo, max(dt_cutoff, dt_lo * 1.0001), cfg.linear_bins)
        dr_edges = linear_edges(0.0, dr_hist_cutoff, 1 if dr_degenerate
                                else cfg.linear_bins)
    else:
        dt_edges = log_edges(dt_lo, max(dt_cutoff, dt_lo * 1.0001), cfg.bins_per_decade)
        if dr_degenerate:
            dr_edges = np.array([0.0, 1.0])
        else:
            z = min(cfg.dr_zero_edge, dr_cutoff / 2.0)
            dr_edges = np.concatenate(([0.0], log_edges(z, dr_cutoff,
                                                        cfg.bins_per_decade)))

    # cohort of each subscriber by event count (post-dedup), -1 = dropped
    cohort_mins = np.array([c.min_count for c in cohorts])
    cohort_of = np.searchsorted(cohort_mins, event_counts, side="right") - 1
    cohort_of[event_counts < 2] = -1

    dt_hists = _HistAccumulator(window.n_days, dt_edges, dt_cutoff)
    dr_hists = _HistAccumulator(window.n_days, dr_edges, dr_hist_cutoff)
    cohort_hists = _HistAccumulator(len(cohorts), dt_edges, dt_cutoff)

    csv_dump = None
    sub_tokens = np.asarray(store.subscribers, dtype=object)
    if cfg.dump_samples_csv:
        csv_dump = open(out_dir / "samples.csv", "w", encoding="utf-8", newline="\n")
        csv_dump.write("subscriber_id,day_index,dt_min,dr_m\n")

    n_file_samples = samples_path.stat().st_size // SAMPLE_DTYPE.itemsize
    with open(samples_path, "rb") as f:
        while True:
            chunk = np.fromfile(f, dtype=SAMPLE_DTYPE, count=SAMPLE_CHUNK)
            if not len(chunk):
                break
            dt = chunk["dt"]
            dr = chunk["dr"]
            day = chunk["day"].astype(np.int64)
            m_dt = (dt >= cfg.dt_window[0]) & (dt <= cfg.dt_window[1])
            dt_hists.add(dt[m_dt], day[m_dt])
            cg = cohort_of[chunk["sub"][m_dt]]
            ok = cg >= 0
            cohort_hists.add(dt[m_dt][ok], cg[ok])
            m_dr = (dt >= cfg.dr_dt_window[0]) & (dt <= cfg.dr_dt_window[1])
            dr_hists.add(dr[m_dr], day[m_dr])
            if csv_dump is not None:
                frame = pd.DataFrame({
                    "subscriber_id": sub_tokens[chunk["sub"]],
                    "day_index": day, "dt_min": dt, "dr_m": dr})
                frame.to_csv(csv_dump, header=False, index=False, lineterminator="\n")
    if csv_dump is not None:
        csv_dump.close()

    # per-subscriber mean waiting times and the two population averages
    has_mean = dt_count > 0
    means = dt_sum[has_mean] / dt_count[has_mean]
    omitted = int(((event_counts >= 2) & ~has_mean).sum())
    mean_of_means = float(means.mean())
    pooled_mean = float(dt_sum.sum() / dt_count.sum())
    mean_hist = _HistAccumulator(1, dt_edges, dt_cutoff)
    mean_hist.add(means, np.zeros(len(means), dtype=np.int64))

    dt_family = dt_hists.family()
    dr_family = dr_hists.family()

    _write_histogram_csv(out_dir / "histogram_dt.csv", dt_hists.pooled())
    _write_histogram_csv(out_dir / "histogram_dr.csv", dr_hists.pooled())
    _write_histogram_csv(out_dir / "histogram_mean_dt.csv", mean_hist.pooled())
    if cfg.per_day:
        _write_curves_csv(out_dir / "curves_dt.csv", dt_family)
        _write_curves_csv(out_dir / "curves_dr.csv", dr_family)
    _write_labeled_curves_csv(out_dir / "cohorts_dt.csv", [c.label for c in cohorts],
                              [cohort_hists.histogram(g) for g in range(len(cohorts))],
                              "cohort")
    with open(out_dir / "density.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("hour_index,count\n")
        for h, c in enumerate(hourly):
            f.write(f"{h},{c}\n")
    with open(out_dir / "rg.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("subscriber_id,n_events,rg_m\n")
        for i in range(n_subs):
            if event_counts[i] > 0:
                f.write(f"{store.subscribers[i]},{event_counts[i]},{_fmt(rg_values[i])}\n")

    summary = {
        "n_records_stored": int(store.n_records),
        "n_events_deduped": int(n_events),
        "n_duplicates_dropped": int(n_duplicates),
        "n_subscribers": int((event_counts > 0).sum()),
        "n_trajectories": int((event_counts >= 2).sum()),
        "dropped_single": int((event_counts == 1).sum()),
        "n_samples_total": int(n_samples),
        "n_dt_admitted": int(dt_hists.counts.sum() + dt_hists.n_cutoff.sum()
                             + dt_hists.n_below.sum() + dt_hists.n_above.sum()),
        "n_dr_admitted": int(dr_hists.counts.sum() + dr_hists.n_cutoff.sum()
                             + dr_hists.n_below.sum() + dr_hists.n_above.sum()),
        "subscribers_omitted_from_means": omitted,
        "dt_window": list(cfg.dt_window),
        "dr_dt_window": list(cfg.dr_dt_window),
        "coords": cfg.coords,
        "cutoffs": {"dt_max_obs": dt_adm[1],
                    "dr_max_obs": dr_adm[1] if np.isfinite(dr_adm[1]) else None},
        "extremes_prefilter": {"dt_min": dt_pre[0], "dt_max": dt_pre[1],
                               "dr_min": dr_pre[0], "dr_max": dr_pre[1]},
        "extremes_postfilter": {"dt_min": dt_adm[0], "dt_max": dt_adm[1],
                                "dr_min": dr_adm[0] if np.isfinite(dr_adm[0]) else None,
                                "dr_max": dr_adm[1] if np.isfinite(dr_adm[1]) else None},
        "population_mean_dt": mean_of_means,
        "pooled_mean_dt": pooled_mean,
        "cohort_sizes": {c.label: int((cohort_of == g).sum())
                         for g, c in enumerate(cohorts)},
        "empty_days": dt_family.empty_days,
        "n_samples_file": int(n_file_samples),
    }
    return summary
