"""Deterministic synthetic data with analytically known ground truth.

Beats are a sum of two Gaussians (a systolic lobe plus a smaller reflected
lobe a quarter period later) repeated at the beat period, plus seeded white
noise, so true peak and foot locations are known exactly and every label is
reproducible from (spec, seed, window coordinates).

Tasks
-----
HR_PREDICTABLE    label "hr": the record's true heart rate - a label that
                  genuinely is a function of the signal.
RANDOM_LABEL      label "sbp": drawn per window from N(120, 20^2),
                  independent of the signal - ill-conditioned by design.
DRIFTING_LABEL    label "sbp": per-patient constant plus a linear drift in
                  elapsed time, for calibration-decay experiments.
SUBSPACE_VECTORS  raw vectors in a known low-rank linear subspace, for
                  bottleneck-size selection.

The signal stream depends only on (seed, patient, record), never on the
task, so two tasks with one seed share identical waveforms and differ only
in labels.
"""

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .features import BeatSeries
from .signals import Channel, Dataset, Record, Waveform, write_dataset
from .util import stable_seed

logger = logging.getLogger(__name__)

# Beat morphology relative to the beat period.
_SYSTOLIC_WIDTH = 0.09
_REFLECTED_WIDTH = 0.12
_REFLECTED_DELAY = 0.25
_REFLECTED_AMPLITUDE = 0.35


class SynthTask(Enum):
    HR_PREDICTABLE = "hr"
    RANDOM_LABEL = "random"
    DRIFTING_LABEL = "drift"
    SUBSPACE_VECTORS = "subspace"


@dataclass
class SynthSpec:
    n_patients: int = 20
    records_per_patient: int = 3
    duration_s: float = 360.0
    rate_hz: float = 125.0
    hr_range: tuple = (50.0, 110.0)
    noise_std: float = 0.05
    task: SynthTask = SynthTask.HR_PREDICTABLE
    seed: int = 0
    drift_per_s: float = 0.1     # DRIFTING_LABEL slope, label units per second
    subspace_rank: int = 3       # SUBSPACE_VECTORS intrinsic dimension

    def __post_init__(self):
        if isinstance(self.task, str):
            self.task = SynthTask(self.task)
        self.hr_range = tuple(self.hr_range)
        if not (40.0 <= self.hr_range[0] <= self.hr_range[1] <= 180.0):
            raise ValueError("hr_range must lie within [40, 180] bpm")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def label_name(self):
        return "hr" if self.task is SynthTask.HR_PREDICTABLE else "sbp"


def gen_ppg(hr_bpm, duration_s, rate_hz=125.0, noise_std=0.0, seed=0):
    """One synthetic PPG waveform plus its true beat locations.

    Returns
    -------
    (Waveform, BeatSeries)
        True peaks/feet are extrema of the noiseless beat model, so they
        stay valid references however noisy the returned samples are.
    """
    period = 60.0 / hr_bpm
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    s1 = _SYSTOLIC_WIDTH * period
    s2 = _REFLECTED_WIDTH * period
    clean = np.zeros(n)

    def add_lobe(center, sigma, amplitude):
        # Gaussian support is effectively +/- 5 sigma; evaluating only
        # there keeps long records cheap
        lo = max(0, int(np.floor((center - 5 * sigma) * rate_hz)))
        hi = min(n, int(np.ceil((center + 5 * sigma) * rate_hz)) + 1)
        if lo < hi:
            clean[lo:hi] += amplitude * np.exp(-0.5 * ((t[lo:hi] - center) / sigma) ** 2)

    centers = []
    k = -2
    while True:
        c = (k + 0.5) * period
        if c - 3 * period > duration_s:
            break
        add_lobe(c, s1, 1.0)
        add_lobe(c + _REFLECTED_DELAY * period, s2, _REFLECTED_AMPLITUDE)
        if 0.0 <= c < duration_s:
            centers.append(c)
        k += 1
    half = max(1, int(round(s1 * rate_hz)))
    peaks = []
    for c in centers:
        ci = int(round(c * rate_hz))
        lo = max(0, ci - half)
        hi = min(n, ci + half + 1)
        peaks.append(lo + int(np.argmax(clean[lo:hi])))
    feet = []
    prev = 0
    for pk in peaks:
        seg = clean[prev:pk]
        feet.append(prev + int(np.argmin(seg)) if len(seg) else max(pk - 1, 0))
        prev = pk
    rng = np.random.default_rng(seed)
    samples = clean + noise_std * rng.standard_normal(n) if noise_std > 0 else clean
    return Waveform(samples, rate_hz, Channel.PPG), BeatSeries(peaks, feet)


def record_hr(spec, patient_idx, record_idx):
    """The true heart rate of one record, reproducible from the spec."""
    rng = np.random.default_rng(stable_seed(spec.seed, "hr", patient_idx, record_idx))
    return float(rng.uniform(*spec.hr_range))


def _patient_base(spec, patient_idx):
    rng = np.random.default_rng(stable_seed(spec.seed, "base", patient_idx))
    return float(rng.normal(120.0, 10.0))


def _random_label(spec, patient_idx, record_idx, start_index):
    rng = np.random.default_rng(
        stable_seed(spec.seed, "label", patient_idx, record_idx, start_index))
    return float(rng.normal(120.0, 20.0))


def patient_id(idx):
    return f"p{idx:03d}"


def record_id(patient_idx, record_idx):
    return f"p{patient_idx:03d}r{record_idx}"


def parse_record_id(rid):
    """Inverse of record_id; needed to re-derive labels for loaded data."""
    if not rid.startswith("p") or "r" not in rid:
        raise ValueError(f"not a synthetic record id: {rid!r}")
    p, r = rid[1:].split("r", 1)
    return int(p), int(r)


def gen_subspace_vectors(n, dim, rank, seed=0, coord_var=2.0):
    """Vectors confined to a known ``rank``-dimensional linear subspace.

    The subspace basis is orthonormal and coefficients are Gaussian, scaled
    so the average per-coordinate variance is ``coord_var``.
    """
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((dim, rank)))[0]
    coef = rng.standard_normal((n, rank)) * np.sqrt(coord_var * dim / rank)
    return coef @ basis.T


def gen_dataset(spec):
    """Build the synthetic dataset for a spec: records of PPG waveforms.

    For SUBSPACE_VECTORS each record holds one subspace vector as its
    waveform; other tasks generate the two-Gaussian beat train at the
    record's true heart rate.
    """
    records = []
    if spec.task is SynthTask.SUBSPACE_VECTORS:
        dim = int(round(spec.duration_s * spec.rate_hz))
        n = spec.n_patients * spec.records_per_patient
        vectors = gen_subspace_vectors(n, dim, spec.subspace_rank,
                                       stable_seed(spec.seed, "subspace"))
        i = 0
        for p in range(spec.n_patients):
            for r in range(spec.records_per_patient):
                wf = Waveform(vectors[i], spec.rate_hz, Channel.PPG)
                records.append(Record(record_id(p, r), patient_id(p),
                                      {Channel.PPG: wf}, r * spec.duration_s))
                i += 1
        return Dataset(records)
    for p in range(spec.n_patients):
        for r in range(spec.records_per_patient):
            hr = record_hr(spec, p, r)
            wf, _ = gen_ppg(hr, spec.duration_s, spec.rate_hz, spec.noise_std,
                            seed=stable_seed(spec.seed, "noise", p, r))
            records.append(Record(record_id(p, r), patient_id(p),
                                  {Channel.PPG: wf}, r * spec.duration_s))
    return Dataset(records)


def label_windows(spec, windows):
    """Attach each window's task label, derived only from its coordinates.

    Works identically for freshly generated and disk-round-tripped data,
    because labels depend on (spec, seed, patient idx, record idx, window
    start) and nothing else.
    """
    for w in windows:
        p, r = parse_record_id(w.record_id)
        if spec.task is SynthTask.HR_PREDICTABLE:
            w.labels["hr"] = record_hr(spec, p, r)
        elif spec.task is SynthTask.RANDOM_LABEL:
            w.labels["sbp"] = _random_label(spec, p, r, w.start_index)
        elif spec.task is SynthTask.DRIFTING_LABEL:
            elapsed = r * spec.duration_s + w.start_index / spec.rate_hz
            w.labels["sbp"] = _patient_base(spec, p) + spec.drift_per_s * elapsed
    return windows


SPEC_FILENAME = "synth_spec.json"


def write_synth_dataset(spec, out_dir):
    """Write manifest + CSVs + a spec sidecar enabling label re-derivation."""
    out_dir = Path(out_dir)
    ds = gen_dataset(spec)
    manifest = write_dataset(ds, out_dir)
    payload = asdict(spec)
    payload["task"] = spec.task.value
    (out_dir / SPEC_FILENAME).write_text(json.dumps(payload, indent=2, sort_keys=True))
    return manifest


def load_synth_spec(data_dir):
    """Read back the spec sidecar, or None when the directory has none."""
    path = Path(data_dir) / SPEC_FILENAME
    if not path.exists():
        return None
    payload = json.loads(path.read_text())
    payload["hr_range"] = tuple(payload["hr_range"])
    return SynthSpec(**payload)
