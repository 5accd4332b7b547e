"""Handcrafted feature extraction from PPG (and optionally ECG) windows.

All timing features depend only on peak/foot locations, so they are
invariant to positive amplitude scaling of the input waveform.  The fixed
feature registry is:

=================  =====================================================
``hr``             beats per minute, 60 / median inter-beat interval
``hrv``            SDNN, population std of inter-beat intervals (s)
``quality``        heuristic signal-quality score in [0, 1]
``rise_time_norm`` mean systolic rise time as a fraction of beat duration
``rpat``           ECG R-peak to PPG systolic peak delay (s)
``inv_rpat``       1 / rpat (guarded for rpat > 1 ms)
``rwat``           systolic peak to reflected-wave inflection delay (s)
=================  =====================================================

plus ``delta_<name>`` and ``std_<name>`` derived columns.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .signals import autocorr_quality
from .util import PulseAuditError

logger = logging.getLogger(__name__)

FEATURE_REGISTRY = ("hr", "hrv", "quality", "rise_time_norm", "rpat", "inv_rpat", "rwat")

# Beat detector constants: prominence relative to window std admits any
# amplitude scale; 0.33 s refractory admits 40-180 bpm.
PROMINENCE_FRAC = 0.3
REFRACTORY_S = 0.33


class NoBeatsError(PulseAuditError):
    """The beat detector found no usable beats."""


class FeatureError(PulseAuditError):
    """A feature's preconditions are not met (too few beats, degenerate beat...)."""


@dataclass(frozen=True)
class BeatSeries:
    """Systolic peak and waveform-foot sample indices, one foot per beat."""

    peak_indices: np.ndarray
    foot_indices: np.ndarray

    def __post_init__(self):
        peaks = np.asarray(self.peak_indices, dtype=np.int64)
        feet = np.asarray(self.foot_indices, dtype=np.int64)
        object.__setattr__(self, "peak_indices", peaks)
        object.__setattr__(self, "foot_indices", feet)
        if len(peaks) != len(feet):
            raise ValueError("one foot per peak required")
        if np.any(np.diff(peaks) <= 0) or np.any(np.diff(feet) <= 0):
            raise ValueError("peak and foot indices must be strictly increasing")
        if np.any(feet > peaks):
            raise ValueError("each foot must precede its peak")

    def __len__(self):
        return len(self.peak_indices)

    def intervals_s(self, rate_hz):
        return np.diff(self.peak_indices) / rate_hz


def detect_beats(ppg):
    """Find systolic peaks and the foot preceding each.

    Peaks are local maxima with prominence >= 0.3 * window std and pairwise
    separation >= 0.33 s.  Each foot is the sample-wise minimum between the
    previous peak (or the window start) and its peak.

    Raises
    ------
    NoBeatsError
        If no peak passes the prominence/separation rule.
    """
    x = np.asarray(ppg.samples, dtype=np.float64)
    sd = x.std()
    if sd <= 0.0:
        raise NoBeatsError("no beats: constant signal")
    distance = max(1, int(round(REFRACTORY_S * ppg.rate_hz)))
    peaks, _ = find_peaks(x, prominence=PROMINENCE_FRAC * sd, distance=distance)
    if len(peaks) == 0:
        raise NoBeatsError("no beats: no peak passed the prominence rule")
    feet = []
    prev = 0
    for pk in peaks:
        seg = x[prev:pk + 1]
        feet.append(prev + int(np.argmin(seg)) if len(seg) else prev)
        prev = pk
    feet = np.asarray(feet, dtype=np.int64)
    # a foot equal to its peak index (monotone rise from window start) is
    # degenerate; nudge it one sample back where possible
    same = feet >= peaks
    feet[same] = np.maximum(peaks[same] - 1, 0)
    return BeatSeries(peaks, feet)


def heart_rate(beats, rate_hz):
    """60 / median inter-peak interval, in bpm.  Needs >= 2 peaks."""
    if len(beats) < 2:
        raise FeatureError("heart_rate needs at least 2 peaks")
    return 60.0 / float(np.median(beats.intervals_s(rate_hz)))


def hrv_sdnn(beats, rate_hz, sub_window_s=None):
    """SDNN: population standard deviation of inter-peak intervals (s).

    With ``sub_window_s`` set, intervals are grouped into consecutive
    sub-windows of that duration and the mean of per-group SDNNs is
    returned.  Needs >= 3 peaks.
    """
    if len(beats) < 3:
        raise FeatureError("hrv_sdnn needs at least 3 peaks")
    intervals = beats.intervals_s(rate_hz)
    if sub_window_s is None:
        return float(np.std(intervals))
    starts = beats.peak_indices[:-1] / rate_hz
    groups = (starts // sub_window_s).astype(int)
    sdnns = [np.std(intervals[groups == g]) for g in np.unique(groups)
             if np.sum(groups == g) >= 2]
    if not sdnns:
        return float(np.std(intervals))
    return float(np.mean(sdnns))


def systolic_slope(ppg, beats):
    """Mean systolic rise time as a fraction of beat duration.

    Per beat, rise time = (peak - foot) in samples and beat duration is
    the foot-to-foot interval, so a waveform rising over its whole beat
    scores 1.0.  The last beat has no following foot and is dropped.

    Raises
    ------
    FeatureError
        If no beat has both a distinct foot and a measurable duration.
    """
    if len(beats) < 1:
        raise FeatureError("systolic_slope needs at least 1 beat")
    peaks = beats.peak_indices
    feet = beats.foot_indices
    values = []
    for i in range(len(beats) - 1):
        duration = feet[i + 1] - feet[i]
        rise = peaks[i] - feet[i]
        if rise <= 0:
            raise FeatureError(f"degenerate beat at sample {peaks[i]}: foot == peak")
        if duration > 0:
            values.append(rise / duration)
    if not values:
        raise FeatureError("systolic_slope needs at least 2 beats for a beat duration")
    return float(np.mean(values))


def detect_r_peaks(ecg, rate_hz):
    """R-peak indices located via the squared ECG derivative.

    QRS complexes are found as local maxima of the squared derivative with
    0.33 s separation; each is then snapped to the ECG maximum within
    +/- 0.05 s so the reported index sits on the R apex rather than on a
    slope flank.
    """
    x = np.asarray(ecg, dtype=np.float64)
    sq = np.gradient(x) ** 2
    if sq.max() <= 0.0:
        return np.array([], dtype=np.int64)
    distance = max(1, int(round(REFRACTORY_S * rate_hz)))
    anchors, _ = find_peaks(sq, height=0.1 * sq.max(), distance=distance)
    halo = max(1, int(round(0.05 * rate_hz)))
    peaks = []
    for a in anchors:
        lo = max(0, a - halo)
        hi = min(len(x), a + halo + 1)
        peaks.append(lo + int(np.argmax(x[lo:hi])))
    return np.unique(peaks)


def rpat(ecg, ppg, beats):
    """Median delay from each ECG R-peak to the following PPG systolic peak (s).

    ECG and PPG must be time-aligned at the same rate.

    Raises
    ------
    FeatureError
        If no R-peak is found, or no PPG peak follows any R-peak.
    """
    if ecg.rate_hz != ppg.rate_hz:
        raise FeatureError("rpat requires equal ECG and PPG rates")
    rate = ppg.rate_hz
    r_peaks = detect_r_peaks(ecg.samples, rate)
    if len(r_peaks) == 0:
        raise FeatureError("rpat: no R-peaks found")
    delays = []
    for pk in beats.peak_indices:
        preceding = r_peaks[r_peaks <= pk]
        if len(preceding):
            delays.append((pk - preceding[-1]) / rate)
    if not delays:
        raise FeatureError("rpat: no PPG peak follows any R-peak")
    return float(np.median(delays))


# Guard band (s) kept clear of the beat boundaries during the inflection
# search, so the corner into the next beat's upstroke is not mistaken for
# a reflected-wave inflection.
_RWAT_GUARD_S = 0.02


def rwat(ppg, beats):
    """Reflected wave arrival time (s).

    Per beat: the first zero crossing (negative to positive) of the second
    derivative after the systolic peak, i.e. the first inflection of the
    decay, linearly interpolated between samples.  The search stops a
    small guard band before the next foot.  The median across beats with a
    crossing is returned.

    Raises
    ------
    FeatureError
        If no beat shows an inflection within its guarded search range.
    """
    if len(beats) < 1:
        raise FeatureError("rwat needs at least 1 beat")
    x = np.asarray(ppg.samples, dtype=np.float64)
    rate = ppg.rate_hz
    d2 = np.gradient(np.gradient(x))
    # exactly-linear decays carry float jitter of ~1e-16; a crossing must
    # clear a scale-relative floor to count as curvature
    tol = 1e-9 * np.max(np.abs(d2))
    guard = max(2, int(round(_RWAT_GUARD_S * rate)))
    values = []
    for i, pk in enumerate(beats.peak_indices):
        end = beats.foot_indices[i + 1] if i + 1 < len(beats) else len(x)
        end -= guard
        for j in range(pk + 1, end - 1):
            if d2[j] <= tol and d2[j + 1] > tol:
                frac = (tol - d2[j]) / (d2[j + 1] - d2[j])
                values.append((j + frac - pk) / rate)
                break
    if not values:
        raise FeatureError("rwat: no inflection found after any systolic peak")
    return float(np.median(values))


# A coefficient of variation at or beyond this counts as fully
# inconsistent; clean pulse trains sit around 0.02-0.05, noise around 0.3.
_CV_REFERENCE = 0.5


def _cv_term(values):
    """0.25 * consistency, where consistency is 1 - cv/0.5 clamped to [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    mean = values.mean()
    if abs(mean) < 1e-12:
        return 0.0
    cv = values.std() / abs(mean)
    return 0.25 * float(np.clip(1.0 - cv / _CV_REFERENCE, 0.0, 1.0))


def quality_feature(w, beats=None):
    """Heuristic quality score in [0, 1].

    0.5 * autocorrelation score + 0.25 * beat-amplitude consistency +
    0.25 * beat-interval consistency.  Consistency maps the coefficient of
    variation linearly onto [0, 1] with 0.5 or more counting as fully
    inconsistent; a term contributes 0 when too few beats exist to
    measure it.
    """
    score = 0.5 * autocorr_quality(w)
    if beats is not None and len(beats) >= 2:
        x = np.asarray(w.samples, dtype=np.float64)
        amplitudes = x[beats.peak_indices] - x[beats.foot_indices]
        score += _cv_term(amplitudes)
        score += _cv_term(beats.intervals_s(w.rate_hz))
    return float(min(score, 1.0))


@dataclass
class FeatureVector:
    """Named feature values for one window; names come from the registry."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.values.items():
            base = name
            for prefix in ("delta_", "std_"):
                if name.startswith(prefix):
                    base = name[len(prefix):]
            if base not in FEATURE_REGISTRY:
                raise ValueError(f"feature {name!r} not in registry")
            if not math.isfinite(value):
                raise ValueError(f"feature {name!r} has non-finite value {value}")

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def get(self, name, default=None):
        return self.values.get(name, default)


# rpat below 1 ms is treated as a detection artifact; inv_rpat is omitted.
_MIN_RPAT_S = 1e-3


def extract_features(ppg, ecg=None):
    """Compute every registry feature available for one window.

    Features whose preconditions fail (too few beats, no ECG...) are
    simply absent from the result.
    """
    values = {}
    try:
        beats = detect_beats(ppg)
    except NoBeatsError:
        beats = None
    values["quality"] = quality_feature(ppg, beats)
    if beats is not None:
        rate = ppg.rate_hz
        for name, fn in (("hr", lambda: heart_rate(beats, rate)),
                         ("hrv", lambda: hrv_sdnn(beats, rate)),
                         ("rise_time_norm", lambda: systolic_slope(ppg, beats)),
                         ("rwat", lambda: rwat(ppg, beats))):
            try:
                values[name] = fn()
            except FeatureError:
                pass
        if ecg is not None:
            try:
                values["rpat"] = rpat(ecg, ppg, beats)
                if values["rpat"] > _MIN_RPAT_S:
                    values["inv_rpat"] = 1.0 / values["rpat"]
            except FeatureError:
                pass
    return FeatureVector(values)


def delta_and_std(features_by_window, baseline):
    """Per-feature deltas against a baseline plus cross-window stds.

    Returns a FeatureVector holding ``delta_<name>`` (last window's value
    minus the baseline's) and ``std_<name>`` (population std across the
    provided windows) for every base feature present on both sides.
    Features present on only one side are omitted with a logged warning.
    """
    if not features_by_window:
        raise FeatureError("delta_and_std needs at least one window")
    out = {}
    last = features_by_window[-1]
    names = set()
    for fv in features_by_window:
        names.update(n for n in fv.values if n in FEATURE_REGISTRY)
    for name in sorted(names):
        series = [fv[name] for fv in features_by_window if name in fv]
        if name in last and name in baseline:
            out[f"delta_{name}"] = last[name] - baseline[name]
        elif name in last:
            logger.warning("feature %r missing from baseline; delta omitted", name)
        if len(series) == len(features_by_window):
            out[f"std_{name}"] = float(np.std(series))
        else:
            logger.warning("feature %r missing from some windows; std omitted", name)
    for name in sorted(n for n in baseline.values if n in FEATURE_REGISTRY):
        if name not in names:
            logger.warning("feature %r present only in baseline; delta omitted", name)
    return FeatureVector(out)


def export_feature_matrix(path, windows, feature_vectors, label_names=()):
    """Write the feature-matrix CSV.

    Columns are ``patient_id,record_id,window_start,<feature...>,<label...>``;
    missing values become empty cells.
    """
    feature_names = sorted({n for fv in feature_vectors for n in fv.values})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "record_id", "window_start"]
                        + feature_names + list(label_names))
        for win, fv in zip(windows, feature_vectors):
            row = [win.patient_id, win.record_id, win.start_index]
            row += [repr(fv[n]) if n in fv else "" for n in feature_names]
            row += [repr(win.labels[n]) if n in win.labels else "" for n in label_names]
            writer.writerow(row)
    return feature_names
