"""Waveform data model, dataset ingestion, preprocessing and windowing.

A dataset on disk is one JSON manifest plus one CSV per record:

* manifest: ``{"rate_hz": 125.0, "patients": [{"id": "p0", "age": 61,
  "records": [{"id": "p0r0", "file": "p0r0.csv", "channels": ["ppg", "abp"]}]}]}``
* record CSV: header row ``t,ppg[,abp][,ecg]``, comma separated, one row
  per sample.  The ``t`` column is validated against the declared rate,
  never interpolated.

Channel entries may also be objects ``{"name": "ppg", "rate_hz": 125.0}``;
a record whose channels declare different rates is rejected, since all
waveforms of a record must share one sample rate.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import butter, find_peaks, sosfiltfilt

from .util import PulseAuditError

logger = logging.getLogger(__name__)


class Channel(Enum):
    PPG = "ppg"
    ABP = "abp"
    ECG = "ecg"
    TONOMETER = "tonometer"


class ManifestError(PulseAuditError):
    """Manifest file missing, unparsable, or schema-invalid."""


class MissingFileError(PulseAuditError):
    """A record CSV referenced by the manifest does not exist."""


class MalformedRowError(PulseAuditError):
    """A record CSV row could not be parsed or violates an invariant."""


class RateMismatchError(PulseAuditError):
    """Channels of one record declare or imply different sample rates."""


class UnlabelableWindowError(PulseAuditError):
    """No beats could be found, so no ground-truth label can be derived."""


@dataclass(frozen=True)
class Waveform:
    """A uniformly sampled signal segment."""

    samples: np.ndarray
    rate_hz: float
    channel: Channel = Channel.PPG

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform samples must be a nonempty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must all be finite")
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise ValueError("rate_hz must be a positive finite number")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.rate_hz

    def slice(self, start, length):
        """Sample-index slice as a new Waveform (same rate and channel)."""
        return Waveform(self.samples[start:start + length], self.rate_hz, self.channel)


@dataclass(frozen=True)
class Record:
    record_id: str
    patient_id: str
    waveforms: dict  # Channel -> Waveform
    start_time: float | None = None

    def __post_init__(self):
        rates = {w.rate_hz for w in self.waveforms.values()}
        if len(rates) > 1:
            raise RateMismatchError(
                f"record {self.record_id!r}: channels declare different rates {sorted(rates)}"
            )

    @property
    def rate_hz(self):
        return next(iter(self.waveforms.values())).rate_hz

    @property
    def n_samples(self):
        return min(len(w) for w in self.waveforms.values())


@dataclass
class Dataset:
    records: list
    metadata: dict = field(default_factory=dict)  # patient_id -> {age, weight, height}

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.record_id in seen:
                raise ValueError(f"duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
        for pid, meta in self.metadata.items():
            for key, value in meta.items():
                if value is not None and value <= 0:
                    raise ValueError(f"metadata {key}={value} for patient {pid!r} must be positive")

    @property
    def patient_ids(self):
        return sorted({r.patient_id for r in self.records})


@dataclass(frozen=True)
class WindowSpec:
    length_s: float
    stride_s: float

    def __post_init__(self):
        if self.length_s <= 0 or self.stride_s <= 0:
            raise ValueError("window length and stride must be positive")


@dataclass
class Window:
    patient_id: str
    record_id: str
    start_index: int
    signal: Waveform
    labels: dict = field(default_factory=dict)

    @property
    def length(self):
        return len(self.signal)

    @property
    def start_s(self):
        return self.start_index / self.signal.rate_hz


def _parse_channel(name):
    try:
        return Channel(name.strip().lower())
    except ValueError:
        raise ManifestError(f"unknown channel name {name!r}") from None


def _read_record_csv(path, record_id, columns, n_expected_cols, rate_hz):
    """Parse one record CSV, returning a column-name -> float array map."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != n_expected_cols:
            raise ValueError("column count mismatch")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite value")
    except Exception:
        _diagnose_csv(path, record_id, n_expected_cols)
        raise  # _diagnose_csv always raises; this is unreachable
    t = data[:, columns["t"]]
    expected = t[0] + np.arange(len(t)) / rate_hz
    if np.max(np.abs(t - expected)) > 0.5 / rate_hz:
        raise MalformedRowError(
            f"record {record_id!r}: time column inconsistent with declared rate {rate_hz} Hz"
        )
    return data


def _diagnose_csv(path, record_id, n_expected_cols):
    """Slow re-parse of a CSV that failed the fast path, to name the bad row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRowError(f"record {record_id!r}: CSV file {path} is empty")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_expected_cols:
                raise MalformedRowError(
                    f"record {record_id!r}: row {lineno} has {len(row)} fields, "
                    f"expected {n_expected_cols}"
                )
            for cell in row:
                try:
                    value = float(cell)
                except ValueError:
                    raise MalformedRowError(
                        f"record {record_id!r}: row {lineno} has non-numeric field {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise MalformedRowError(
                        f"record {record_id!r}: row {lineno} has non-finite value {cell!r}"
                    )
    raise MalformedRowError(f"record {record_id!r}: CSV file {path} could not be parsed")


def load_dataset(manifest_path):
    """Load a dataset described by a JSON manifest.

    Parameters
    ----------
    manifest_path : str or Path
        Path to the manifest JSON; record CSV paths are resolved relative
        to its parent directory.

    Returns
    -------
    Dataset

    Raises
    ------
    ManifestError, MissingFileError, MalformedRowError, RateMismatchError
        Each diagnostic names the offending record.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"manifest file {manifest_path} does not exist")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: {exc}") from None

    if "rate_hz" not in manifest or not manifest["rate_hz"] > 0:
        raise ManifestError("manifest must declare a positive rate_hz")
    base_rate = float(manifest["rate_hz"])
    root = manifest_path.parent

    records = []
    metadata = {}
    for patient in manifest.get("patients", []):
        pid = str(patient["id"])
        meta = {k: patient[k] for k in ("age", "weight", "height") if patient.get(k) is not None}
        if meta:
            metadata[pid] = meta
        for rec in patient.get("records", []):
            rid = str(rec["id"])
            rec_rate = float(rec.get("rate_hz", base_rate))
            chan_rates = {}
            for entry in rec["channels"]:
                if isinstance(entry, dict):
                    chan = _parse_channel(entry["name"])
                    chan_rates[chan] = float(entry.get("rate_hz", rec_rate))
                else:
                    chan_rates[_parse_channel(entry)] = rec_rate
            if not chan_rates:
                raise ManifestError(f"record {rid!r} declares no channels")
            if len(set(chan_rates.values())) > 1:
                raise RateMismatchError(
                    f"record {rid!r}: channels declare different rates "
                    f"{sorted(set(chan_rates.values()))}"
                )
            csv_path = root / rec["file"]
            if not csv_path.exists():
                raise MissingFileError(f"record {rid!r}: missing file {csv_path}")
            with open(csv_path, newline="") as fh:
                header = fh.readline().strip().lstrip("﻿")
            names = [h.strip().lower() for h in header.split(",")]
            if "t" not in names:
                raise MalformedRowError(f"record {rid!r}: CSV header lacks a 't' column")
            columns = {name: i for i, name in enumerate(names)}
            for chan in chan_rates:
                if chan.value not in columns:
                    raise MalformedRowError(
                        f"record {rid!r}: CSV lacks declared channel column {chan.value!r}"
                    )
            data = _read_record_csv(csv_path, rid, columns, len(names), rec_rate)
            waveforms = {
                chan: Waveform(data[:, columns[chan.value]], rate, chan)
                for chan, rate in chan_rates.items()
            }
            records.append(Record(rid, pid, waveforms, rec.get("start_time")))
    return Dataset(records, metadata)


def write_dataset(ds, out_dir, float_fmt="%.17g"):
    """Write a dataset as manifest + per-record CSVs (lossless round trip)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patients = {}
    rate = None
    for rec in ds.records:
        rate = rec.rate_hz
        entry = patients.setdefault(rec.patient_id, {"id": rec.patient_id, "records": []})
        meta = ds.metadata.get(rec.patient_id, {})
        entry.update({k: v for k, v in meta.items()})
        fname = f"{rec.record_id}.csv"
        chans = sorted(rec.waveforms, key=lambda c: c.value)
        rec_entry = {"id": rec.record_id, "file": fname, "channels": [c.value for c in chans]}
        if rec.start_time is not None:
            rec_entry["start_time"] = rec.start_time
        entry["records"].append(rec_entry)
        n = rec.n_samples
        cols = [np.arange(n) / rec.rate_hz]
        cols += [rec.waveforms[c].samples[:n] for c in chans]
        table = np.column_stack(cols)
        header = ",".join(["t"] + [c.value for c in chans])
        np.savetxt(out_dir / fname, table, delimiter=",", header=header,
                   comments="", fmt=float_fmt)
    manifest = {"rate_hz": rate, "patients": [patients[k] for k in sorted(patients)]}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir / "manifest.json"


def bandpass(w, low_hz, high_hz):
    """Zero-phase 4th-order Butterworth band-pass.

    The filter is applied forward and backward (``sosfiltfilt``) so peaks
    keep their timing; output has the same length and rate as the input.

    Raises
    ------
    ValueError
        Unless ``0 < low_hz < high_hz < rate_hz / 2``.
    """
    if not (0.0 < low_hz < high_hz < w.rate_hz / 2.0):
        raise ValueError(
            f"invalid band edges ({low_hz}, {high_hz}) for rate {w.rate_hz} Hz"
        )
    sos = butter(4, [low_hz, high_hz], btype="band", fs=w.rate_hz, output="sos")
    return Waveform(sosfiltfilt(sos, w.samples), w.rate_hz, w.channel)


# Physiologic beat-period search range for the autocorrelation score:
# 0.33 s..1.5 s covers 40-180 bpm.
_AC_LAG_LO_S = 0.33
_AC_LAG_HI_S = 1.5


def autocorr_quality(w):
    """Periodicity score in [0, 1].

    Maximum of the unbiased, mean-removed, normalized autocorrelation over
    beat-period lags (0.33 s to 1.5 s).  Lags above half the window length
    are not searched; if no searchable lag remains (window too short for
    two periods) or the window is constant, the score is 0.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    n = len(x)
    xc = x - x.mean()
    var = np.mean(xc * xc)
    if not np.isfinite(var) or var <= 0.0:
        return 0.0
    lo = int(math.ceil(_AC_LAG_LO_S * w.rate_hz))
    hi = min(int(math.floor(_AC_LAG_HI_S * w.rate_hz)), n // 2)
    if hi < lo or lo < 1:
        return 0.0
    acf = np.correlate(xc, xc, mode="full")[n - 1 + lo:n - 1 + hi + 1]
    lags = np.arange(lo, hi + 1)
    r = acf / (n - lags) / var
    return float(np.clip(r.max(), 0.0, 1.0))


def segment(record, spec, channel=Channel.PPG):
    """Cut a record into windows at offsets 0, stride, 2*stride, ...

    Only windows fully inside the record are produced, so the count is
    ``floor((n_samples - length) / stride) + 1``.  A record shorter than
    one window yields an empty list.
    """
    rate = record.rate_hz
    length = int(round(spec.length_s * rate))
    stride = int(round(spec.stride_s * rate))
    if length < 2:
        raise ValueError("window length must cover at least 2 samples")
    wf = record.waveforms.get(channel)
    if wf is None:
        raise ValueError(f"record {record.record_id!r} has no {channel.value} channel")
    n = record.n_samples
    windows = []
    for start in range(0, n - length + 1, stride):
        windows.append(Window(record.patient_id, record.record_id, start,
                              wf.slice(start, length)))
    return windows


def filter_dataset(ds, spec, threshold, channel=Channel.PPG):
    """Window every record and keep windows with autocorr_quality >= threshold.

    Returns ``(kept_windows, retained_fraction)``; an empty dataset yields
    ``([], 0.0)``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    kept = []
    total = 0
    for rec in ds.records:
        for win in segment(rec, spec, channel):
            total += 1
            if autocorr_quality(win.signal) >= threshold:
                kept.append(win)
    fraction = len(kept) / total if total else 0.0
    return kept, fraction


def extract_sbp(abp_window):
    """Per-window systolic BP: the median of per-beat ABP maxima.

    Beats are the local maxima of the ABP waveform with prominence at
    least 0.3 of the window's standard deviation and 0.33 s separation.

    Raises
    ------
    UnlabelableWindowError
        If no beat can be detected (e.g. a flat line).
    """
    x = np.asarray(abp_window.samples, dtype=np.float64)
    sd = x.std()
    if sd <= 0.0:
        raise UnlabelableWindowError("no beats detected in ABP window (constant signal)")
    distance = max(1, int(round(0.33 * abp_window.rate_hz)))
    peaks, _ = find_peaks(x, prominence=0.3 * sd, distance=distance)
    if len(peaks) == 0:
        raise UnlabelableWindowError("no beats detected in ABP window")
    return float(np.median(x[peaks]))


def attach_sbp_labels(record, windows, label="sbp"):
    """Attach per-window SBP labels computed from the record's ABP channel.

    Windows whose ABP slice has no detectable beats keep no label; the
    count of such windows is returned.
    """
    abp = record.waveforms.get(Channel.ABP)
    if abp is None:
        raise ValueError(f"record {record.record_id!r} has no ABP channel")
    skipped = 0
    for win in windows:
        try:
            win.labels[label] = extract_sbp(abp.slice(win.start_index, win.length))
        except UnlabelableWindowError:
            skipped += 1
    if skipped:
        logger.warning("record %s: %d windows unlabelable from ABP", record.record_id, skipped)
    return skipped
