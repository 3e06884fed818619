"""Streaming CSV ingestion of raw activity records.

The per-line parser is the semantics authority. The stream ingester works in
chunks: each chunk is first parsed vectorized (pandas C engine with strict
dtypes); any chunk the fast path cannot fully validate is re-parsed line by
line with the canonical parser, so both paths classify rows identically.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from .errors import DataError, ParseError
from .records import CSV_HEADER, CdrRecord, ObservationWindow
from .store import SubscriberStore

_COLUMNS = CSV_HEADER.split(",")
CHUNK_LINES = 131_072
MAX_ERROR_SAMPLES = 10


def parse_cdr_line(line: str, line_no: int | None = None) -> CdrRecord | None:
    """Parse one CSV row into a CdrRecord.

    Returns None for blank lines and for the header line; raises ParseError
    for malformed rows. The observation window is not checked here.
    """
    text = line.rstrip("\r\n")
    if not text or text.isspace():
        return None
    if text.strip() == CSV_HEADER:
        return None
    fields = next(csv.reader([text]))
    if len(fields) != 5:
        raise ParseError("bad_field_count", line_no, f"expected 5 fields, got {len(fields)}")
    # Identifier tokens are opaque and kept verbatim; int()/float() tolerate
    # surrounding whitespace in the numeric fields on their own.
    sub, ts_raw, tower, x_raw, y_raw = fields
    if not sub:
        raise ParseError("empty_subscriber_id", line_no)
    if not tower:
        raise ParseError("empty_tower_id", line_no)
    try:
        timestamp = int(ts_raw)
    except ValueError:
        raise ParseError("bad_timestamp", line_no, repr(ts_raw)) from None
    try:
        x = float(x_raw)
        y = float(y_raw)
    except ValueError:
        raise ParseError("bad_coordinate", line_no, f"{x_raw!r},{y_raw!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ParseError("non_finite_coordinate", line_no, f"{x_raw},{y_raw}")
    return CdrRecord(sub, timestamp, tower, x, y)


def dedupe(records: list[CdrRecord]) -> list[CdrRecord]:
    """Collapse exact duplicates within one subscriber's time-sorted records.

    Rows with equal (timestamp, tower) collapse to one; distinct towers at
    the same timestamp are all kept, ordered lexicographically by tower id.
    """
    ordered = sorted(records, key=lambda r: (r.timestamp, r.tower_id))
    out: list[CdrRecord] = []
    for rec in ordered:
        if out and out[-1].timestamp == rec.timestamp and out[-1].tower_id == rec.tower_id:
            continue
        out.append(rec)
    return out


@dataclass
class IngestSummary:
    total_lines: int = 0
    accepted: int = 0
    skipped: int = 0
    out_of_window: int = 0
    errors: int = 0
    error_samples: list[str] = field(default_factory=list)

    def merge(self, other: "IngestSummary") -> None:
        self.total_lines += other.total_lines
        self.accepted += other.accepted
        self.skipped += other.skipped
        self.out_of_window += other.out_of_window
        self.errors += other.errors
        room = MAX_ERROR_SAMPLES - len(self.error_samples)
        if room > 0:
            self.error_samples.extend(other.error_samples[:room])

    def as_dict(self) -> dict:
        return {"total_lines": self.total_lines, "accepted": self.accepted,
                "skipped": self.skipped, "out_of_window": self.out_of_window,
                "errors": self.errors, "error_samples": list(self.error_samples)}


@dataclass
class _ChunkResult:
    summary: IngestSummary
    subs: np.ndarray      # object array of accepted subscriber tokens
    towers: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray


_EMPTY = np.empty(0, dtype=object)


def _parse_chunk_fast(lines: list[str], first_line_no: int,
                      window: ObservationWindow) -> _ChunkResult | None:
    """Vectorized chunk parse; returns None when the chunk needs the slow path."""
    text = "".join(lines)
    try:
        frame = pd.read_csv(
            io.StringIO(text), header=None, names=_COLUMNS,
            dtype={"subscriber_id": str, "timestamp": np.int64, "tower_id": str,
                   "x": np.float64, "y": np.float64},
            float_precision="round_trip", skip_blank_lines=False, na_filter=False)
    except (ValueError, pd.errors.ParserError):
        return None
    if len(frame) != len(lines):
        return None
    # Missing or empty identifier tokens force the canonical path.
    for col in ("subscriber_id", "tower_id"):
        if frame[col].isna().any() or (frame[col].to_numpy(dtype=object) == "").any():
            return None
    subs = frame["subscriber_id"].to_numpy(dtype=object)
    towers = frame["tower_id"].to_numpy(dtype=object)
    t = frame["timestamp"].to_numpy()
    x = frame["x"].to_numpy()
    y = frame["y"].to_numpy()
    finite = np.isfinite(x) & np.isfinite(y)
    if not finite.all():
        return None
    summary = IngestSummary(total_lines=len(lines))
    in_window = (t >= window.t_start) & (t <= window.t_end)
    summary.out_of_window = int((~in_window).sum())
    summary.accepted = int(in_window.sum())
    return _ChunkResult(summary, subs[in_window], towers[in_window],
                        t[in_window], x[in_window], y[in_window])


def _parse_chunk_slow(lines: list[str], first_line_no: int, window: ObservationWindow,
                      on_error: str) -> _ChunkResult:
    summary = IngestSummary(total_lines=len(lines))
    subs: list[str] = []
    towers: list[str] = []
    ts: list[int] = []
    xs: list[float] = []
    ys: list[float] = []
    for offset, line in enumerate(lines):
        line_no = first_line_no + offset
        try:
            rec = parse_cdr_line(line, line_no)
        except ParseError as exc:
            if on_error == "abort":
                raise
            summary.errors += 1
            if len(summary.error_samples) < MAX_ERROR_SAMPLES:
                summary.error_samples.append(str(exc))
            continue
        if rec is None:
            summary.skipped += 1
        elif not window.contains(rec.timestamp):
            summary.out_of_window += 1
        else:
            summary.accepted += 1
            subs.append(rec.subscriber_id)
            towers.append(rec.tower_id)
            ts.append(rec.timestamp)
            xs.append(rec.x)
            ys.append(rec.y)
    return _ChunkResult(summary,
                        np.array(subs, dtype=object) if subs else _EMPTY,
                        np.array(towers, dtype=object) if towers else _EMPTY,
                        np.array(ts, dtype=np.int64),
                        np.array(xs), np.array(ys))


def _parse_chunk(lines: list[str], first_line_no: int, window: ObservationWindow,
                 on_error: str) -> _ChunkResult:
    result = _parse_chunk_fast(lines, first_line_no, window)
    if result is None:
        result = _parse_chunk_slow(lines, first_line_no, window, on_error)
    return result


def _chunks(source: Iterable[str], size: int) -> Iterator[tuple[int, list[str]]]:
    it = iter(source)
    line_no = 1
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield line_no, block
        line_no += len(block)


def ingest_stream(source: Iterable[str], window: ObservationWindow,
                  store: SubscriberStore, *, on_error: str = "abort",
                  max_errors: int | None = None, chunk_lines: int = CHUNK_LINES,
                  threads: int = 1) -> IngestSummary:
    """Stream lines into the store, returning acceptance counts.

    Chunks may be parsed concurrently, but results are merged in input order
    so the summary and the store bytes are identical for any thread count.
    """
    if on_error not in ("abort", "skip"):
        raise DataError(f"unknown error policy {on_error!r}")
    total = IngestSummary()

    def consume(result: _ChunkResult) -> None:
        total.merge(result.summary)
        if max_errors is not None and total.errors > max_errors:
            raise DataError(f"error budget exceeded: {total.errors} > {max_errors}")
        if len(result.t):
            sub_idx = store.intern_subscribers(result.subs)
            tower_idx = store.intern_towers(result.towers)
            store.append(sub_idx, tower_idx, result.t, result.x, result.y)

    if threads <= 1:
        for line_no, block in _chunks(source, chunk_lines):
            consume(_parse_chunk(block, line_no, window, on_error))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(
                    lambda args: _parse_chunk(args[1], args[0], window, on_error),
                    _chunks(source, chunk_lines)):
                consume(result)
    return total


def ingest_file(path, window: ObservationWindow, store: SubscriberStore,
                **kwargs) -> IngestSummary:
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with handle:
        return ingest_stream(handle, window, store, **kwargs)
