"""On-disk sharded record store with a per-subscriber index.

Records are appended as fixed-width binary rows to one shard file per
subscriber hash class, so both ingestion and analysis hold at most a buffer
plus one shard in memory, never the full dataset. Subscriber and tower
tokens are interned to integer indexes; the interning dictionaries are the
only structures that grow with the population.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .records import CdrRecord

RECORD_DTYPE = np.dtype([
    ("sub", "<i4"),
    ("tower", "<i4"),
    ("t", "<i8"),
    ("x", "<f8"),
    ("y", "<f8"),
])

DEFAULT_SHARDS = 64


class SubscriberStore:
    """Append-only record store sharded by subscriber index."""

    def __init__(self, root: Path | str, n_shards: int = DEFAULT_SHARDS, mode: str = "w"):
        self.root = Path(root)
        self.mode = mode
        if mode == "w":
            self.root.mkdir(parents=True, exist_ok=True)
            for old in self.root.glob("shard_*.bin"):
                old.unlink()
            self.n_shards = n_shards
            self.subscribers: list[str] = []
            self.towers: list[str] = []
            self._sub_index: dict[str, int] = {}
            self._tower_index: dict[str, int] = {}
            self.n_records = 0
            self._handles = [open(self._shard_path(k), "wb") for k in range(self.n_shards)]
        elif mode == "r":
            meta = json.loads((self.root / "meta.json").read_text())
            self.n_shards = meta["n_shards"]
            self.n_records = meta["n_records"]
            self.subscribers = (self.root / "subscribers.txt").read_text().splitlines()
            self.towers = (self.root / "towers.txt").read_text().splitlines()
            self._sub_index = {s: i for i, s in enumerate(self.subscribers)}
            self._tower_index = {t: i for i, t in enumerate(self.towers)}
            self._handles = []
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def _shard_path(self, k: int) -> Path:
        return self.root / f"shard_{k:03d}.bin"

    # -- write side ---------------------------------------------------------

    def intern_subscribers(self, tokens: np.ndarray) -> np.ndarray:
        """Map an array of subscriber tokens to stable integer indexes."""
        uniq, inverse = np.unique(np.asarray(tokens, dtype=object), return_inverse=True)
        idx = self._sub_index
        mapped = np.empty(len(uniq), dtype=np.int32)
        for j, tok in enumerate(uniq):
            i = idx.get(tok)
            if i is None:
                i = len(self.subscribers)
                idx[tok] = i
                self.subscribers.append(tok)
            mapped[j] = i
        return mapped[inverse]

    def intern_towers(self, tokens: np.ndarray) -> np.ndarray:
        uniq, inverse = np.unique(np.asarray(tokens, dtype=object), return_inverse=True)
        idx = self._tower_index
        mapped = np.empty(len(uniq), dtype=np.int32)
        for j, tok in enumerate(uniq):
            i = idx.get(tok)
            if i is None:
                i = len(self.towers)
                idx[tok] = i
                self.towers.append(tok)
            mapped[j] = i
        return mapped[inverse]

    def append(self, sub_idx: np.ndarray, tower_idx: np.ndarray,
               t: np.ndarray, x: np.ndarray, y: np.ndarray) -> None:
        """Append one batch; rows are routed to shards by subscriber index."""
        if self.mode != "w":
            raise DataError("store opened read-only")
        rows = np.empty(len(sub_idx), dtype=RECORD_DTYPE)
        rows["sub"] = sub_idx
        rows["tower"] = tower_idx
        rows["t"] = t
        rows["x"] = x
        rows["y"] = y
        shard = rows["sub"] % self.n_shards
        order = np.argsort(shard, kind="stable")
        rows = rows[order]
        shard = shard[order]
        starts = np.searchsorted(shard, np.arange(self.n_shards))
        ends = np.append(starts[1:], len(rows))
        for k in range(self.n_shards):
            if starts[k] < ends[k]:
                self._handles[k].write(rows[starts[k]:ends[k]].tobytes())
        self.n_records += len(rows)

    def add_records(self, records) -> None:
        """Convenience batch append from CdrRecord objects."""
        recs = list(records)
        if not recs:
            return
        subs = self.intern_subscribers(np.array([r.subscriber_id for r in recs], dtype=object))
        tows = self.intern_towers(np.array([r.tower_id for r in recs], dtype=object))
        self.append(subs, tows,
                    np.array([r.timestamp for r in recs], dtype=np.int64),
                    np.array([r.x for r in recs]),
                    np.array([r.y for r in recs]))

    def finalize(self) -> None:
        for h in self._handles:
            h.close()
        self._handles = []
        (self.root / "subscribers.txt").write_text(
            "\n".join(self.subscribers) + ("\n" if self.subscribers else ""))
        (self.root / "towers.txt").write_text(
            "\n".join(self.towers) + ("\n" if self.towers else ""))
        meta = {"n_shards": self.n_shards, "n_records": self.n_records,
                "n_subscribers": len(self.subscribers), "n_towers": len(self.towers)}
        (self.root / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self.mode = "r"

    # -- read side ----------------------------------------------------------

    @classmethod
    def open(cls, root: Path | str) -> "SubscriberStore":
        return cls(root, mode="r")

    @property
    def n_subscribers(self) -> int:
        return len(self.subscribers)

    def read_shard(self, k: int) -> np.ndarray:
        path = self._shard_path(k)
        if not path.exists() or path.stat().st_size == 0:
            return np.empty(0, dtype=RECORD_DTYPE)
        return np.fromfile(path, dtype=RECORD_DTYPE)

    def tower_rank(self) -> np.ndarray:
        """Rank of each tower index under lexicographic token order.

        Used as the tiebreak key for simultaneous events at distinct towers.
        """
        order = sorted(range(len(self.towers)), key=lambda i: self.towers[i])
        rank = np.empty(max(len(self.towers), 1), dtype=np.int64)
        for r, i in enumerate(order):
            rank[i] = r
        return rank

    def iter_records(self):
        """All stored records as CdrRecord objects, shard by shard."""
        for k in range(self.n_shards):
            for row in self.read_shard(k):
                yield CdrRecord(self.subscribers[row["sub"]], int(row["t"]),
                                self.towers[row["tower"]], float(row["x"]), float(row["y"]))
