import numpy as np
import pytest

from mobilis.records import CdrRecord, ObservationWindow
from mobilis.store import SubscriberStore

T0 = 1215129600  # 2008-07-04T00:00:00Z


@pytest.fixture
def window12():
    return ObservationWindow.from_days(T0, 12)


def record_line(rec: CdrRecord) -> str:
    return f"{rec.subscriber_id},{rec.timestamp},{rec.tower_id},{rec.x},{rec.y}"


def store_of(tmp_path, records, n_shards=4):
    store = SubscriberStore(tmp_path / "store", n_shards=n_shards)
    store.add_records(records)
    store.finalize()
    return store


def random_records(rng: np.random.Generator, n_subs, max_events, window,
                   with_duplicates=False) -> list[CdrRecord]:
    # coordinates are a function of the tower, as in real CDR data
    records = []
    for s in range(n_subs):
        n = int(rng.integers(1, max_events + 1))
        ts = rng.integers(window.t_start, window.t_end + 1, size=n)
        for t in ts:
            k = int(rng.integers(0, 9))
            rec = CdrRecord(f"s{s}", int(t), f"T{k}", 1000.0 * k, 500.0 * k + 100.0)
            records.append(rec)
            if with_duplicates and rng.random() < 0.15:
                records.append(rec)
    order = rng.permutation(len(records))
    return [records[i] for i in order]
