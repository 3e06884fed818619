"""Empirical distributions: histograms, per-day curve families, densities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, NoDataError
from .records import CdrRecord, ObservationWindow
from .trajectory import IntervalSample, Trajectory, interval_samples


def log_edges(lo: float, hi: float, per_decade: int = 50) -> np.ndarray:
    """Log-spaced bin edges from lo to hi, `per_decade` bins per decade."""
    if not (0 < lo < hi):
        raise ConfigError(f"need 0 < lo < hi, got {lo}..{hi}")
    n_bins = max(1, round(per_decade * np.log10(hi / lo)))
    edges = np.geomspace(lo, hi, n_bins + 1)
    edges[0], edges[-1] = lo, hi
    return edges


def linear_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if lo >= hi or n_bins < 1:
        raise ConfigError(f"bad linear edges {lo}..{hi} / {n_bins}")
    return np.linspace(lo, hi, n_bins + 1)


@dataclass
class Histogram:
    """Binned, normalized empirical distribution with an explicit cutoff.

    Bins are half-open [lo, hi) except the final bin, which is closed; any
    sample >= cutoff is excluded from the bins and counted in n_cutoff.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    cutoff: float
    n_cutoff: int = 0             # samples >= cutoff
    n_below: int = 0              # samples < bin_edges[0]
    n_above: int = 0              # samples in (bin_edges[-1], cutoff)
    probabilities: np.ndarray = field(init=False)
    pdf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ConfigError("counts/edges length mismatch")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ConfigError("bin edges must be strictly increasing")
        if self.cutoff < self.bin_edges[-1]:
            raise ConfigError("cutoff must not fall below the last edge")
        total = self.counts.sum()
        widths = np.diff(self.bin_edges)
        if total > 0:
            self.probabilities = self.counts / total
            self.pdf = self.probabilities / widths
        else:
            self.probabilities = np.zeros(len(self.counts))
            self.pdf = np.zeros(len(self.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def make_histogram(samples, edges, cutoff: float) -> Histogram:
    """Histogram samples onto the given edges, discarding values >= cutoff."""
    x = np.asarray(samples, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ConfigError("bin edges must be strictly increasing")
    if cutoff < edges[-1]:
        raise ConfigError("cutoff must not fall below the last edge")
    n_cutoff = int((x >= cutoff).sum())
    kept = x[x < cutoff]
    counts, _ = np.histogram(kept, bins=edges)
    n_below = int((kept < edges[0]).sum())
    n_above = int((kept > edges[-1]).sum())
    return Histogram(edges, counts, cutoff, n_cutoff, n_below, n_above)


@dataclass
class Cutoffs:
    dt_max_obs: float             # minutes
    dr_max_obs: float             # meters


def observed_cutoffs(samples: Iterable[IntervalSample]) -> Cutoffs:
    """Maximum observed waiting time and displacement over admitted samples."""
    dt_max = dr_max = None
    for s in samples:
        dt_max = s.dt if dt_max is None else max(dt_max, s.dt)
        dr_max = s.dr if dr_max is None else max(dr_max, s.dr)
    if dt_max is None:
        raise NoDataError("no samples")
    return Cutoffs(dt_max, dr_max)


@dataclass
class MeanWaitResult:
    means: dict[str, float]       # subscriber -> mean admitted dt, minutes
    omitted: int                  # subscribers whose samples were all filtered out


def mean_inter_event_per_subscriber(trajectories: Iterable[Trajectory],
                                    window: ObservationWindow,
                                    dt_window: tuple[float, float] = (15.0, 1440.0),
                                    coords: str = "planar") -> MeanWaitResult:
    """Per-subscriber mean of the dt samples admitted by the closed window."""
    lo, hi = dt_window
    means: dict[str, float] = {}
    omitted = 0
    for traj in trajectories:
        dts = [s.dt for s in interval_samples(traj, window, coords) if lo <= s.dt <= hi]
        if dts:
            means[traj.subscriber_id] = float(np.mean(dts))
        else:
            omitted += 1
    return MeanWaitResult(means, omitted)


def population_mean(means: Mapping[str, float]) -> float:
    """Unweighted mean over subscribers (mean of means, one vote each)."""
    if not means:
        raise NoDataError("no subscriber means")
    return float(np.mean(list(means.values())))


@dataclass
class CurveFamily:
    """Per-day histograms on shared edges plus their pointwise mean curve."""

    per_day: list[Histogram]
    day_average: np.ndarray
    empty_days: list[int]

    @property
    def bin_edges(self) -> np.ndarray:
        return self.per_day[0].bin_edges


def curve_family(values, day_indices, n_days: int, edges, cutoff: float) -> CurveFamily:
    """Split samples by day and histogram each day on shared edges.

    The day-average curve is the pointwise mean of the per-day probability
    curves (all days weighted equally, empty days contributing zeros).
    """
    if n_days < 1:
        raise ConfigError("need at least one day")
    values = np.asarray(values, dtype=float)
    day_indices = np.asarray(day_indices)
    per_day = [make_histogram(values[day_indices == d], edges, cutoff)
               for d in range(n_days)]
    day_average = np.mean([h.probabilities for h in per_day], axis=0)
    empty = [d for d, h in enumerate(per_day) if h.total == 0]
    return CurveFamily(per_day, day_average, empty)


def hourly_activity_density(records, window: ObservationWindow) -> np.ndarray:
    """Event count per hour of the observation window (n_days x 24 entries)."""
    if isinstance(records, np.ndarray) and records.dtype != object:
        timestamps = records
    else:
        timestamps = np.fromiter(
            (r.timestamp if isinstance(r, CdrRecord) else int(r) for r in records),
            dtype=np.int64)
    counts = np.zeros(window.n_hours, dtype=np.int64)
    if len(timestamps):
        idx = np.clip((timestamps - window.t_start) // 3600, 0, window.n_hours - 1)
        counts += np.bincount(idx, minlength=window.n_hours)
    return counts
