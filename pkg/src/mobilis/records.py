"""Canonical activity record and observation-window types."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .errors import ConfigError

CSV_HEADER = "subscriber_id,timestamp,tower_id,x,y"

# 2008-07-04T00:00:00Z, first day of the default 12-day observation window.
DEFAULT_T_START = 1215129600
DEFAULT_N_DAYS = 12
SECONDS_PER_DAY = 86400


@dataclass(frozen=True, slots=True)
class CdrRecord:
    """One subscriber activity resolved to its serving tower."""

    subscriber_id: str
    timestamp: int          # seconds since Unix epoch
    tower_id: str
    x: float                # planar easting in meters (or longitude under geo coords)
    y: float                # planar northing in meters (or latitude under geo coords)


@dataclass(frozen=True)
class ObservationWindow:
    """Closed time window [t_start, t_end] partitioned into days.

    day_boundaries holds the start timestamp of each day; the first boundary
    equals t_start. A timestamp equal to t_end belongs to the last day.
    """

    t_start: int
    t_end: int
    day_boundaries: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ConfigError(f"empty window: {self.t_start}..{self.t_end}")
        bounds = self.day_boundaries or (self.t_start,)
        if bounds[0] != self.t_start:
            raise ConfigError("first day boundary must equal t_start")
        if any(b >= c for b, c in zip(bounds, bounds[1:])):
            raise ConfigError("day boundaries must be strictly increasing")
        if bounds[-1] >= self.t_end:
            raise ConfigError("day boundaries must lie before t_end")
        object.__setattr__(self, "day_boundaries", tuple(bounds))

    @classmethod
    def from_days(cls, t_start: int, n_days: int) -> "ObservationWindow":
        if n_days < 1:
            raise ConfigError("need at least one day")
        bounds = tuple(t_start + k * SECONDS_PER_DAY for k in range(n_days))
        return cls(t_start, t_start + n_days * SECONDS_PER_DAY, bounds)

    @classmethod
    def default(cls) -> "ObservationWindow":
        return cls.from_days(DEFAULT_T_START, DEFAULT_N_DAYS)

    @property
    def n_days(self) -> int:
        return len(self.day_boundaries)

    @property
    def n_hours(self) -> int:
        return -((self.t_start - self.t_end) // 3600)

    def contains(self, timestamp: int) -> bool:
        return self.t_start <= timestamp <= self.t_end

    def day_index(self, timestamp: int) -> int:
        """Day owning a timestamp; t_end is clamped into the last day."""
        i = bisect.bisect_right(self.day_boundaries, timestamp) - 1
        return max(0, min(i, self.n_days - 1))

    def hour_index(self, timestamp: int) -> int:
        i = (timestamp - self.t_start) // 3600
        return max(0, min(i, self.n_hours - 1))
