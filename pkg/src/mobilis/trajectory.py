"""Per-subscriber trajectories and the raw waiting-time / displacement samples.

These are the reference (per-subscriber) semantics; the streaming pipeline
uses vectorized equivalents that are property-tested against them.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError
from .ingest import dedupe
from .records import CdrRecord, ObservationWindow
from .store import SubscriberStore

EARTH_RADIUS_M = 6_371_000.0


def planar_distance(x0, y0, x1, y1):
    return np.hypot(np.asarray(x1) - x0, np.asarray(y1) - y0)


def haversine_distance(lon0, lat0, lon1, lat1):
    """Great-circle distance in meters; inputs in degrees."""
    p0, p1 = np.radians(lat0), np.radians(np.asarray(lat1))
    dphi = p1 - p0
    dlam = np.radians(np.asarray(lon1) - lon0)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p0) * np.cos(p1) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pair_distance(x0, y0, x1, y1, coords: str = "planar"):
    if coords == "planar":
        return planar_distance(x0, y0, x1, y1)
    if coords == "geo":
        return haversine_distance(x0, y0, x1, y1)
    raise ConfigError(f"unknown coords mode {coords!r}")


@dataclass
class Trajectory:
    """Time-ordered event sequence of one subscriber."""

    subscriber_id: str
    t: np.ndarray                 # int64 epoch seconds, non-decreasing
    x: np.ndarray
    y: np.ndarray
    towers: list[str]

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_records(cls, records: list[CdrRecord]) -> "Trajectory":
        recs = dedupe(records)
        return cls(recs[0].subscriber_id,
                   np.array([r.timestamp for r in recs], dtype=np.int64),
                   np.array([r.x for r in recs]),
                   np.array([r.y for r in recs]),
                   [r.tower_id for r in recs])


@dataclass(frozen=True)
class IntervalSample:
    """One consecutive-event interval: waiting time and displacement."""

    subscriber_id: str
    day_index: int
    dt: float                     # minutes
    dr: float                     # meters


@dataclass
class BuildResult:
    trajectories: list[Trajectory]
    dropped_single: int


def build_trajectories(store: SubscriberStore, window: ObservationWindow | None = None) -> BuildResult:
    """Assemble sorted, deduplicated trajectories; drop single-event subscribers.

    Records were already window-checked at ingest, so `window` is accepted
    only for interface symmetry. Subscribers left with fewer than two events
    after deduplication carry no mobility signal and are dropped (counted).
    """
    trajectories = []
    dropped = 0
    for traj in iter_trajectories(store, min_events=1):
        if len(traj) < 2:
            dropped += 1
        else:
            trajectories.append(traj)
    return BuildResult(trajectories, dropped)


def interval_samples(traj: Trajectory, window: ObservationWindow,
                     coords: str = "planar") -> list[IntervalSample]:
    """All consecutive-pair samples of one trajectory, unfiltered.

    dt is in minutes, dr in meters; the day index comes from the earlier
    event of each pair.
    """
    if len(traj) < 2:
        raise ConfigError("need at least two events")
    out = []
    for i in range(len(traj) - 1):
        dt = (int(traj.t[i + 1]) - int(traj.t[i])) / 60.0
        dr = float(pair_distance(traj.x[i], traj.y[i], traj.x[i + 1], traj.y[i + 1], coords))
        out.append(IntervalSample(traj.subscriber_id, window.day_index(int(traj.t[i])), dt, dr))
    return out


def filter_samples(samples: Iterable[IntervalSample], dt_min: float, dt_max: float,
                   dr_max: float | None = None) -> list[IntervalSample]:
    """Keep samples with dt in the closed window [dt_min, dt_max].

    When dr_max is given, additionally require dr <= dr_max (the displacement
    analysis cutoff; also closed).
    """
    if dt_min >= dt_max:
        raise ConfigError(f"empty dt window {dt_min}..{dt_max}")
    kept = [s for s in samples if dt_min <= s.dt <= dt_max]
    if dr_max is not None:
        kept = [s for s in kept if s.dr <= dr_max]
    return kept


_COHORT_PART = re.compile(r"^(\d+)-(\d+)$|^(\d+)\+$")


@dataclass(frozen=True)
class ActivityCohort:
    """Subscriber group keyed by total event count over the window."""

    label: str
    min_count: int
    max_count: int | None         # None = unbounded

    def contains(self, count: int) -> bool:
        return count >= self.min_count and (self.max_count is None or count <= self.max_count)


def default_cohorts() -> list[ActivityCohort]:
    """Logarithmic activity-count bins: 2-10, 11-100, 101-1000, 1001+."""
    return [ActivityCohort("2-10", 2, 10),
            ActivityCohort("11-100", 11, 100),
            ActivityCohort("101-1000", 101, 1000),
            ActivityCohort("1001+", 1001, None)]


def parse_cohort_spec(text: str) -> list[ActivityCohort]:
    cohorts = []
    for part in text.split(","):
        part = part.strip()
        m = _COHORT_PART.match(part)
        if not m:
            raise ConfigError(f"bad cohort spec part {part!r}")
        if m.group(3) is not None:
            cohorts.append(ActivityCohort(part, int(m.group(3)), None))
        else:
            cohorts.append(ActivityCohort(part, int(m.group(1)), int(m.group(2))))
    return cohorts


def validate_cohort_spec(cohorts: list[ActivityCohort]) -> list[ActivityCohort]:
    """Require an exact partition of the counts >= 2, in increasing order."""
    if not cohorts:
        raise ConfigError("empty cohort spec")
    ordered = sorted(cohorts, key=lambda c: c.min_count)
    if ordered[0].min_count != 2:
        raise ConfigError("cohorts must start at count 2")
    for lo, hi in zip(ordered, ordered[1:]):
        if lo.max_count is None or hi.min_count != lo.max_count + 1:
            raise ConfigError(f"cohort gap or overlap between {lo.label!r} and {hi.label!r}")
    if ordered[-1].max_count is not None:
        raise ConfigError("last cohort must be unbounded")
    return ordered


def assign_cohorts(trajectories: Iterable[Trajectory],
                   cohorts: list[ActivityCohort]) -> dict[str, list[str]]:
    """Map cohort label -> subscriber ids, by trajectory event count."""
    ordered = validate_cohort_spec(cohorts)
    result: dict[str, list[str]] = {c.label: [] for c in ordered}
    for traj in trajectories:
        n = len(traj)
        for cohort in ordered:
            if cohort.contains(n):
                result[cohort.label].append(traj.subscriber_id)
                break
    return result


def radius_of_gyration(traj: Trajectory, coords: str = "planar") -> float:
    """Root-mean-square distance of the positions from their centroid.

    Under geo coords the positions are projected equirectangularly about the
    centroid latitude before the planar formula is applied.
    """
    if len(traj) < 1:
        raise ConfigError("need at least one event")
    x = np.asarray(traj.x, dtype=float)
    y = np.asarray(traj.y, dtype=float)
    if coords == "geo":
        lat0 = y.mean()
        x = np.radians(x) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
        y = np.radians(y) * EARTH_RADIUS_M
    dx = x - x.mean()
    dy = y - y.mean()
    return float(np.sqrt(np.mean(dx * dx + dy * dy)))


def iter_trajectories(store: SubscriberStore, min_events: int = 2) -> Iterator[Trajectory]:
    """Stream trajectories shard by shard without loading the whole store."""
    rank = store.tower_rank()
    for k in range(store.n_shards):
        arr = store.read_shard(k)
        if not len(arr):
            continue
        order = np.lexsort((rank[arr["tower"]], arr["t"], arr["sub"]))
        arr = arr[order]
        keep = np.ones(len(arr), dtype=bool)
        keep[1:] = ((arr["sub"][1:] != arr["sub"][:-1])
                    | (arr["t"][1:] != arr["t"][:-1])
                    | (arr["tower"][1:] != arr["tower"][:-1]))
        arr = arr[keep]
        bounds = np.flatnonzero(np.r_[True, arr["sub"][1:] != arr["sub"][:-1], True])
        for a, b in zip(bounds[:-1], bounds[1:]):
            if b - a < min_events:
                continue
            seg = arr[a:b]
            yield Trajectory(store.subscribers[int(seg["sub"][0])],
                             seg["t"].copy(), seg["x"].copy(), seg["y"].copy(),
                             [store.towers[i] for i in seg["tower"]])
