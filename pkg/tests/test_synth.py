"""Synthetic generator: analytic beats, label bookkeeping, round trips."""

import numpy as np
import pytest

from pulseaudit.features import detect_beats, heart_rate
from pulseaudit.signals import Channel, WindowSpec, load_dataset, segment
from pulseaudit.synth import (SynthSpec, SynthTask, gen_dataset, gen_ppg,
                              gen_subspace_vectors, label_windows,
                              load_synth_spec, parse_record_id, record_hr,
                              write_synth_dataset)

RATE = 125.0


class TestGenPpg:
    def test_detector_recovers_true_peaks(self):
        """hr 60, 10 s, noise 0: all 10 true peaks found within 1 sample."""
        ppg, truth = gen_ppg(60.0, 10.0, RATE, noise_std=0.0, seed=0)
        beats = detect_beats(ppg)
        assert len(truth) == 10 and len(beats) == 10
        assert np.max(np.abs(beats.peak_indices - truth.peak_indices)) <= 1

    def test_heart_rate_matches_construction(self):
        ppg, _ = gen_ppg(60.0, 10.0, RATE, noise_std=0.0, seed=0)
        assert heart_rate(detect_beats(ppg), RATE) == pytest.approx(60.0, abs=0.5)

    @pytest.mark.parametrize("hr", [48.0, 75.0, 120.0, 160.0])
    def test_various_rates(self, hr):
        ppg, truth = gen_ppg(hr, 10.0, RATE, noise_std=0.0, seed=1)
        measured = heart_rate(detect_beats(ppg), RATE)
        assert measured == pytest.approx(hr, rel=0.02)

    def test_same_seed_identical(self):
        a, _ = gen_ppg(70.0, 5.0, RATE, noise_std=0.1, seed=9)
        b, _ = gen_ppg(70.0, 5.0, RATE, noise_std=0.1, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_feet_precede_peaks(self):
        _, truth = gen_ppg(55.0, 8.0, RATE, noise_std=0.0, seed=2)
        assert np.all(truth.foot_indices < truth.peak_indices)


def small_spec(task=SynthTask.HR_PREDICTABLE, **kw):
    defaults = dict(n_patients=3, records_per_patient=2, duration_s=20.0,
                    task=task, seed=11)
    defaults.update(kw)
    return SynthSpec(**defaults)


class TestGenDataset:
    def test_structure(self):
        ds = gen_dataset(small_spec())
        assert len(ds.records) == 6
        assert len(ds.patient_ids) == 3
        assert all(Channel.PPG in r.waveforms for r in ds.records)

    def test_signals_shared_across_tasks(self):
        """The waveform stream ignores the task, so one seed gives the
        same signals under different labelings."""
        a = gen_dataset(small_spec(SynthTask.HR_PREDICTABLE))
        b = gen_dataset(small_spec(SynthTask.RANDOM_LABEL))
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.waveforms[Channel.PPG].samples,
                                          rb.waveforms[Channel.PPG].samples)

    def test_deterministic(self):
        a = gen_dataset(small_spec())
        b = gen_dataset(small_spec())
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.waveforms[Channel.PPG].samples,
                                          rb.waveforms[Channel.PPG].samples)

    def test_record_hr_within_range(self):
        spec = small_spec(hr_range=(55.0, 95.0))
        for p in range(spec.n_patients):
            for r in range(spec.records_per_patient):
                assert 55.0 <= record_hr(spec, p, r) <= 95.0


class TestLabels:
    def windows_for(self, spec):
        ds = gen_dataset(spec)
        windows = []
        for rec in ds.records:
            windows.extend(segment(rec, WindowSpec(2.0, 2.0)))
        return label_windows(spec, windows)

    def test_hr_label_is_record_truth(self):
        spec = small_spec()
        for w in self.windows_for(spec):
            p, r = parse_record_id(w.record_id)
            assert w.labels["hr"] == record_hr(spec, p, r)

    def test_random_labels_sbp_like_and_reproducible(self):
        spec = small_spec(SynthTask.RANDOM_LABEL, n_patients=10, duration_s=60.0)
        first = [w.labels["sbp"] for w in self.windows_for(spec)]
        second = [w.labels["sbp"] for w in self.windows_for(spec)]
        assert first == second
        values = np.array(first)
        assert abs(values.mean() - 120.0) < 5.0
        assert abs(values.std() - 20.0) < 5.0

    def test_drifting_labels_grow_linearly(self):
        spec = small_spec(SynthTask.DRIFTING_LABEL, drift_per_s=0.5)
        windows = [w for w in self.windows_for(spec) if w.record_id == "p000r0"]
        windows.sort(key=lambda w: w.start_index)
        values = np.array([w.labels["sbp"] for w in windows])
        steps = np.diff(values)
        np.testing.assert_allclose(steps, 0.5 * 2.0, atol=1e-9)


class TestSubspace:
    def test_exact_rank(self):
        X = gen_subspace_vectors(200, 50, 3, seed=5)
        s = np.linalg.svd(X - X.mean(0), compute_uv=False)
        assert s[2] > 1e-6
        assert s[3] < 1e-8 * s[0]

    def test_coordinate_variance_scale(self):
        X = gen_subspace_vectors(2000, 64, 3, seed=6, coord_var=2.0)
        assert X.var(axis=0).mean() == pytest.approx(2.0, rel=0.2)

    def test_dataset_task(self):
        spec = small_spec(SynthTask.SUBSPACE_VECTORS, duration_s=0.8,
                          subspace_rank=2)
        ds = gen_dataset(spec)
        X = np.stack([r.waveforms[Channel.PPG].samples for r in ds.records])
        s = np.linalg.svd(X - X.mean(0), compute_uv=False)
        assert s[2] < 1e-8 * s[0]


class TestRoundTrip:
    def test_write_load_lossless(self, tmp_path):
        spec = small_spec()
        manifest = write_synth_dataset(spec, tmp_path / "d")
        original = gen_dataset(spec)
        loaded = load_dataset(manifest)
        assert len(loaded.records) == len(original.records)
        by_id = {r.record_id: r for r in loaded.records}
        for rec in original.records:
            np.testing.assert_array_equal(
                by_id[rec.record_id].waveforms[Channel.PPG].samples,
                rec.waveforms[Channel.PPG].samples)

    def test_spec_sidecar_round_trip(self, tmp_path):
        spec = small_spec(SynthTask.RANDOM_LABEL)
        write_synth_dataset(spec, tmp_path / "d")
        back = load_synth_spec(tmp_path / "d")
        assert back == spec

    def test_labels_survive_round_trip(self, tmp_path):
        """Labels recomputed on loaded data equal the in-memory ones."""
        spec = small_spec(SynthTask.RANDOM_LABEL)
        write_synth_dataset(spec, tmp_path / "d")
        loaded = load_dataset(tmp_path / "d" / "manifest.json")
        fresh = gen_dataset(spec)
        win_spec = WindowSpec(2.0, 2.0)
        for rec_a, rec_b in zip(sorted(loaded.records, key=lambda r: r.record_id),
                                sorted(fresh.records, key=lambda r: r.record_id)):
            wa = label_windows(spec, segment(rec_a, win_spec))
            wb = label_windows(spec, segment(rec_b, win_spec))
            assert [w.labels for w in wa] == [w.labels for w in wb]

    def test_byte_identical_writes(self, tmp_path):
        spec = small_spec()
        write_synth_dataset(spec, tmp_path / "a")
        write_synth_dataset(spec, tmp_path / "b")
        for name in ("manifest.json", "p000r0.csv", "synth_spec.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()
