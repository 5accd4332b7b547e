"""Split schemes, exact leakage auditing, range filtering."""

import numpy as np
import pytest

from pulseaudit.signals import Channel, Dataset, Record, Waveform, Window, WindowSpec
from pulseaudit.splits import (LeakageReport, OverlapPair, SplitAssignment,
                               SplitEntry, SplitError, SplitPlan, SplitScheme,
                               audit_split, make_split, range_filter,
                               read_split, write_split)

RATE = 125.0


def toy_dataset(n_patients=10, records_per_patient=2, duration_s=30.0):
    rng = np.random.default_rng(0)
    records = []
    for p in range(n_patients):
        for r in range(records_per_patient):
            n = int(duration_s * RATE)
            wf = Waveform(rng.standard_normal(n), RATE, Channel.PPG)
            records.append(Record(f"p{p}r{r}", f"p{p}", {Channel.PPG: wf}))
    return Dataset(records)


def audit_bruteforce(assignment):
    """Quadratic reference: every (train, test) pair, interval arithmetic."""
    train = assignment.subset("train")
    test = assignment.subset("test")
    pairs = []
    for tr in train:
        for te in test:
            if tr.record_id != te.record_id:
                continue
            shared = (min(tr.end_index, te.end_index)
                      - max(tr.start_index, te.start_index))
            if shared > 0:
                pairs.append((tr, te, shared))
    patients = ({e.patient_id for e in train} & {e.patient_id for e in test})
    return pairs, patients


def pair_keys(pairs):
    return {(p.train.record_id, p.train.start_index, p.test.start_index,
             p.shared_samples) for p in pairs}


class TestMakeSplit:
    def test_no_overlap_partitions_patients(self):
        """10 patients at fraction 0.2: exactly 2 test patients, disjoint."""
        ds = toy_dataset(10)
        split = make_split(ds, WindowSpec(10.0, 5.0), SplitPlan(seed=1))
        train_p = {e.patient_id for e in split.subset("train")}
        test_p = {e.patient_id for e in split.subset("test")}
        assert len(test_p) == 2
        assert not (train_p & test_p)
        assert len(train_p | test_p) == 10

    def test_single_patient_no_overlap_fails(self):
        ds = toy_dataset(1)
        with pytest.raises(SplitError):
            make_split(ds, WindowSpec(10.0, 5.0), SplitPlan())

    def test_single_record_domain_overlap_fails(self):
        ds = toy_dataset(1, records_per_patient=1)
        with pytest.raises(SplitError):
            make_split(ds, WindowSpec(10.0, 5.0),
                       SplitPlan(SplitScheme.DOMAIN_OVERLAP))

    def test_deterministic_given_seed(self):
        ds = toy_dataset(8)
        spec = WindowSpec(10.0, 5.0)
        a = make_split(ds, spec, SplitPlan(seed=42))
        b = make_split(ds, spec, SplitPlan(seed=42))
        assert a.entries == b.entries
        c = make_split(ds, spec, SplitPlan(seed=43))
        assert c.entries != a.entries  # membership moves, structure stays
        assert {(e.record_id, e.start_index) for e in c.entries} == \
               {(e.record_id, e.start_index) for e in a.entries}

    def test_every_window_assigned_exactly_once(self):
        ds = toy_dataset(5)
        split = make_split(ds, WindowSpec(10.0, 5.0),
                           SplitPlan(SplitScheme.DATA_OVERLAP, seed=3))
        keys = [(e.record_id, e.start_index) for e in split.entries]
        assert len(keys) == len(set(keys))
        expected_per_record = int((30.0 - 10.0) / 5.0) + 1
        assert len(keys) == 10 * expected_per_record


class TestAuditSplit:
    def test_no_overlap_split_is_clean(self):
        ds = toy_dataset(10)
        for seed in range(5):
            split = make_split(ds, WindowSpec(10.0, 5.0), SplitPlan(seed=seed))
            report = audit_split(split)
            assert report.clean
            assert report.verdicts == {"data_overlap": "clean",
                                       "domain_overlap": "clean"}

    def test_domain_overlap_flags_patient_not_samples(self):
        """Record-level split of a multi-record patient leaks identity only."""
        ds = toy_dataset(4, records_per_patient=3)
        found = False
        for seed in range(10):
            split = make_split(ds, WindowSpec(10.0, 10.0),
                               SplitPlan(SplitScheme.DOMAIN_OVERLAP, seed=seed))
            report = audit_split(split)
            assert report.data_overlap_pairs == []
            if report.domain_overlap_patients:
                found = True
        assert found

    def test_data_overlap_pigeonhole_on_long_record(self):
        """A 360 s record cut 10 s / 5 s gives a 71-window overlap chain;
        any 80/20 window split must create at least one leaking pair."""
        ds = toy_dataset(1, records_per_patient=2, duration_s=360.0)
        for seed in range(10):
            split = make_split(ds, WindowSpec(10.0, 5.0),
                               SplitPlan(SplitScheme.DATA_OVERLAP, seed=seed))
            report = audit_split(split)
            assert len(report.data_overlap_pairs) >= 1
            ref_pairs, _ = audit_bruteforce(split)
            assert len(report.data_overlap_pairs) == len(ref_pairs)

    def test_hand_built_pair_shares_five_seconds(self):
        """Train [0, 10 s), test [5 s, 15 s): one pair, 5 s * rate shared."""
        entries = [
            SplitEntry("p0", "r0", 0, int(10 * RATE), "train"),
            SplitEntry("p0", "r0", int(5 * RATE), int(10 * RATE), "test"),
        ]
        report = audit_split(SplitAssignment(entries))
        assert len(report.data_overlap_pairs) == 1
        assert report.data_overlap_pairs[0].shared_samples == int(5 * RATE)
        assert report.domain_overlap_patients == {"p0"}

    def test_matches_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            entries = []
            for i in range(rng.integers(5, 40)):
                rec = f"r{rng.integers(0, 4)}"
                start = int(rng.integers(0, 200))
                length = int(rng.integers(5, 60))
                entries.append(SplitEntry(f"p{rng.integers(0, 3)}", rec, start,
                                          length, rng.choice(["train", "test"])))
            report = audit_split(SplitAssignment(entries))
            ref_pairs, ref_patients = audit_bruteforce(SplitAssignment(entries))
            assert pair_keys(report.data_overlap_pairs) == {
                (tr.record_id, tr.start_index, te.start_index, s)
                for tr, te, s in ref_pairs}
            assert report.domain_overlap_patients == ref_patients

    def test_shared_sample_counts_positive(self):
        ds = toy_dataset(2, duration_s=120.0)
        split = make_split(ds, WindowSpec(10.0, 5.0),
                           SplitPlan(SplitScheme.DATA_OVERLAP, seed=1))
        report = audit_split(split)
        assert all(p.shared_samples > 0 for p in report.data_overlap_pairs)


def labeled_windows(values):
    rng = np.random.default_rng(0)
    out = []
    for i, v in enumerate(values):
        w = Window("p0", "r0", i * 100, Waveform(rng.standard_normal(100), RATE,
                                                 Channel.PPG))
        w.labels["sbp"] = float(v)
        out.append(w)
    return out


class TestRangeFilter:
    def test_basic_range(self):
        """Labels {70, 120, 180} in [75, 165]: keep 1, discard 2/3."""
        kept, discarded, summary = range_filter(labeled_windows([70, 120, 180]),
                                                "sbp", 75.0, 165.0)
        assert len(kept) == 1
        assert discarded == pytest.approx(2.0 / 3.0)
        assert summary.after["n"] == 1

    def test_wide_open_range_discards_nothing(self):
        kept, discarded, _ = range_filter(labeled_windows([70, 120, 180]),
                                          "sbp", 0.0, 1e6)
        assert discarded == 0.0 and len(kept) == 3

    def test_filtering_shrinks_label_spread(self):
        """Gaussian labels clipped to [75, 150] have smaller std after."""
        rng = np.random.default_rng(5)
        values = rng.normal(120.0, 20.0, size=400)
        _, _, summary = range_filter(labeled_windows(values), "sbp", 75.0, 150.0)
        assert summary.after["std"] < summary.before["std"]

    def test_empty_result_warns_not_raises(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="pulseaudit.splits"):
            kept, discarded, _ = range_filter(labeled_windows([50, 60]),
                                              "sbp", 100.0, 110.0)
        assert kept == [] and discarded == 1.0
        assert any("discarded" in rec.message for rec in caplog.records)


class TestSplitCsv:
    def test_round_trip(self, tmp_path):
        ds = toy_dataset(4)
        split = make_split(ds, WindowSpec(10.0, 5.0), SplitPlan(seed=2))
        path = tmp_path / "split.csv"
        write_split(split, path)
        back = read_split(path)
        assert back.entries == split.entries

    def test_byte_identical_given_seed(self, tmp_path):
        ds = toy_dataset(4)
        paths = []
        for name in ("a.csv", "b.csv"):
            split = make_split(ds, WindowSpec(10.0, 5.0), SplitPlan(seed=5))
            write_split(split, tmp_path / name)
            paths.append((tmp_path / name).read_bytes())
        assert paths[0] == paths[1]
