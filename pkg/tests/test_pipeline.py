import csv
from pathlib import Path

import numpy as np
import pytest

from mobilis.pipeline import SAMPLE_DTYPE, AnalyzeConfig, analyze_store
from mobilis.records import CdrRecord, ObservationWindow
from mobilis.stats import make_histogram
from mobilis.trajectory import build_trajectories, interval_samples, radius_of_gyration

from conftest import T0, random_records, store_of


def run_analysis(tmp_path, records, window, cfg=None, threads=1, name="out"):
    store = store_of(tmp_path, records, n_shards=8)
    out = tmp_path / name
    info = analyze_store(store, window, cfg or AnalyzeConfig(), out, threads=threads)
    return store, out, info


def reference_samples(store, window, coords="planar"):
    """Per-trajectory reference path for the pipeline's vectorized samples."""
    rows = []
    for traj in build_trajectories(store, window).trajectories:
        for s in interval_samples(traj, window, coords):
            rows.append((s.subscriber_id, s.day_index, s.dt, s.dr))
    return sorted(rows)


class TestBulkMatchesReference:
    def test_samples_equal_reference(self, tmp_path, window12):
        rng = np.random.default_rng(21)
        records = random_records(rng, 60, 30, window12, with_duplicates=True)
        store, out, info = run_analysis(tmp_path, records, window12)
        data = np.fromfile(out / "samples.bin", dtype=SAMPLE_DTYPE)
        got = sorted((store.subscribers[r["sub"]], int(r["day"]), float(r["dt"]),
                      float(r["dr"])) for r in data)
        assert got == reference_samples(store, window12)

    def test_rg_matches_reference(self, tmp_path, window12):
        rng = np.random.default_rng(22)
        records = random_records(rng, 40, 20, window12)
        store, out, info = run_analysis(tmp_path, records, window12)
        by_sub = {}
        with open(out / "rg.csv") as f:
            for row in csv.DictReader(f):
                by_sub[row["subscriber_id"]] = float(row["rg_m"])
        for traj in build_trajectories(store, window12).trajectories:
            assert by_sub[traj.subscriber_id] == pytest.approx(
                radius_of_gyration(traj), rel=1e-9, abs=1e-12)

    def test_histogram_matches_direct_construction(self, tmp_path, window12):
        rng = np.random.default_rng(23)
        records = random_records(rng, 80, 25, window12)
        store, out, info = run_analysis(tmp_path, records, window12)
        dts = np.array([r[2] for r in reference_samples(store, window12)])
        adm = dts[(dts >= 15) & (dts <= 1440)]
        cutoff = info["cutoffs"]["dt_max_obs"]
        with open(out / "histogram_dt.csv") as f:
            rows = list(csv.DictReader(f))
        edges = [float(r["bin_left"]) for r in rows] + [float(rows[-1]["bin_right"])]
        expected = make_histogram(adm, edges, cutoff)
        assert [int(r["count"]) for r in rows] == list(expected.counts)
        for row, p in zip(rows, expected.probabilities):
            assert float(row["probability"]) == pytest.approx(p, abs=1e-15)


class TestDeterminismAndThreads:
    def artifact_bytes(self, out: Path) -> dict:
        names = ["histogram_dt.csv", "histogram_dr.csv", "histogram_mean_dt.csv",
                 "curves_dt.csv", "curves_dr.csv", "cohorts_dt.csv", "density.csv",
                 "rg.csv", "samples.bin"]
        return {n: (out / n).read_bytes() for n in names}

    def test_threads_give_identical_artifacts(self, tmp_path, window12):
        rng = np.random.default_rng(24)
        records = random_records(rng, 100, 30, window12, with_duplicates=True)
        _, out1, _ = run_analysis(tmp_path, records, window12, threads=1, name="t1")
        _, out8, _ = run_analysis(tmp_path, records, window12, threads=8, name="t8")
        assert self.artifact_bytes(out1) == self.artifact_bytes(out8)

    def test_rerun_identical(self, tmp_path, window12):
        rng = np.random.default_rng(25)
        records = random_records(rng, 30, 10, window12)
        _, out1, _ = run_analysis(tmp_path, records, window12, name="r1")
        _, out2, _ = run_analysis(tmp_path, records, window12, name="r2")
        assert self.artifact_bytes(out1) == self.artifact_bytes(out2)


class TestSummaryAccounting:
    def test_counts_consistent(self, tmp_path, window12):
        rng = np.random.default_rng(26)
        records = random_records(rng, 50, 8, window12, with_duplicates=True)
        store, out, info = run_analysis(tmp_path, records, window12)
        result = build_trajectories(store, window12)
        assert info["n_trajectories"] == len(result.trajectories)
        assert info["dropped_single"] == result.dropped_single
        assert info["n_samples_total"] == sum(
            len(t) - 1 for t in result.trajectories)
        assert info["n_records_stored"] == len(records)

    def test_mean_of_means_and_pooled(self, tmp_path, window12):
        records = []
        # subscriber a: two samples 20 and 40 min; subscriber b: one of 100 min
        for sub, offsets in (("a", [0, 1200, 3600]), ("b", [0, 6000])):
            records += [CdrRecord(sub, T0 + o, "T1", 0, 0) for o in offsets]
        _, out, info = run_analysis(tmp_path, records, window12)
        assert info["population_mean_dt"] == pytest.approx((30 + 100) / 2)
        assert info["pooled_mean_dt"] == pytest.approx((20 + 40 + 100) / 3)

    def test_cutoffs_seed_histograms(self, tmp_path, window12):
        rng = np.random.default_rng(27)
        records = random_records(rng, 60, 20, window12)
        _, out, info = run_analysis(tmp_path, records, window12)
        with open(out / "histogram_dt.csv") as f:
            rows = list(csv.DictReader(f))
        assert float(rows[-1]["bin_right"]) == info["cutoffs"]["dt_max_obs"]

    def test_empty_day_flagged(self, tmp_path):
        window = ObservationWindow.from_days(T0, 3)
        records = []
        for day in (0, 2):  # nothing on day 1
            base = T0 + day * 86400
            records += [CdrRecord(f"s{day}", base + off, "T1", 0, 0)
                        for off in (0, 1800, 3600, 9000)]
        _, out, info = run_analysis(tmp_path, records, window)
        assert info["empty_days"] == [1]


class TestSampleDump:
    def test_csv_dump_schema(self, tmp_path, window12):
        rng = np.random.default_rng(28)
        records = random_records(rng, 10, 6, window12)
        cfg = AnalyzeConfig(dump_samples_csv=True)
        store, out, _ = run_analysis(tmp_path, records, window12, cfg=cfg)
        with open(out / "samples.csv") as f:
            rows = list(csv.DictReader(f))
        assert set(rows[0]) == {"subscriber_id", "day_index", "dt_min", "dr_m"}
        assert len(rows) == len(reference_samples(store, window12))


class TestGeoCoords:
    def test_geo_displacements_use_haversine(self, tmp_path, window12):
        # Paris to Le Havre and back, ~176 km
        records = [CdrRecord("a", T0, "P", 2.3522, 48.8566),
                   CdrRecord("a", T0 + 3600, "H", 0.1079, 49.4944),
                   CdrRecord("a", T0 + 7200, "P", 2.3522, 48.8566)]
        cfg = AnalyzeConfig(coords="geo")
        _, out, info = run_analysis(tmp_path, records, window12, cfg=cfg)
        assert info["cutoffs"]["dr_max_obs"] == pytest.approx(176_000, rel=0.02)


class TestCurveIdentity:
    def test_day_average_identity_from_csv(self, tmp_path, window12):
        rng = np.random.default_rng(29)
        records = random_records(rng, 120, 40, window12)
        _, out, _ = run_analysis(tmp_path, records, window12)
        rows = list(csv.DictReader(open(out / "curves_dt.csv")))
        by_day = {}
        for r in rows:
            by_day.setdefault(int(r["day_index"]), []).append(float(r["probability"]))
        days = sorted(d for d in by_day if d >= 0)
        mean = np.mean([by_day[d] for d in days], axis=0)
        assert np.max(np.abs(mean - np.array(by_day[-1]))) <= 1e-12
