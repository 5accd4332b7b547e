"""Calibration baselines, error evaluation, drift curves, AAMI/BHS grading.

The shipped predictors are deliberately simple stand-ins (a training-mean
constant and an ordinary-least-squares model on handcrafted features) so
the calibration and grading machinery can be exercised end to end without
a heavyweight learned model.

Standard-deviation values here are population SDs, and the standards
thresholds are applied inclusively (bias of exactly 5 mmHg and SD of
exactly 8 mmHg pass), so graders are reproducible at boundary values.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .features import extract_features
from .util import PulseAuditError

logger = logging.getLogger(__name__)


class CalibrationError(PulseAuditError):
    """A calibration step's preconditions are not met."""


def _truth(window, label):
    if label not in window.labels:
        raise CalibrationError(
            f"window ({window.patient_id}, {window.record_id}, {window.start_index}) "
            f"is missing label {label!r}"
        )
    return window.labels[label]


class ConstantPredictor:
    """Predicts one constant for every window."""

    def __init__(self, value):
        self.value = float(value)

    def predict(self, window):
        return self.value


class MeanOfTraining:
    """Predicts the mean training-set label, everywhere."""

    def __init__(self):
        self.value = None

    def fit(self, windows, label):
        values = [_truth(w, label) for w in windows]
        if not values:
            raise CalibrationError("MeanOfTraining needs at least one training window")
        self.value = float(np.mean(values))
        return self

    def predict(self, window):
        if self.value is None:
            raise CalibrationError("predictor is not fitted")
        return self.value


# Ridge fallback strength for singular normal equations.
_RIDGE = 1e-8


class LinearOnFeatures:
    """Ordinary least squares on a handcrafted-feature subset.

    Features are extracted per window; training windows missing any of the
    requested features are dropped, and at prediction time a missing
    feature falls back to its training mean.
    """

    def __init__(self, feature_names=("hr", "hrv", "quality", "rise_time_norm")):
        self.feature_names = tuple(feature_names)
        self.coef = None
        self.feature_means = None

    def _row(self, window):
        fv = extract_features(window.signal)
        return [fv.get(name) for name in self.feature_names]

    def fit(self, windows, label):
        rows = []
        targets = []
        for w in windows:
            row = self._row(w)
            if None not in row:
                rows.append(row)
                targets.append(_truth(w, label))
        if len(rows) < len(self.feature_names) + 1:
            raise CalibrationError(
                f"LinearOnFeatures needs more complete-feature windows than "
                f"coefficients ({len(rows)} usable)"
            )
        X = np.asarray(rows)
        y = np.asarray(targets)
        self.feature_means = X.mean(axis=0)
        design = np.column_stack([np.ones(len(X)), X])
        gram = design.T @ design
        rhs = design.T @ y
        try:
            self.coef = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            gram += _RIDGE * np.eye(len(gram))
            self.coef = np.linalg.solve(gram, rhs)
        return self

    def predict(self, window):
        if self.coef is None:
            raise CalibrationError("predictor is not fitted")
        row = self._row(window)
        row = [m if v is None else v for v, m in zip(row, self.feature_means)]
        return float(self.coef[0] + np.dot(self.coef[1:], row))


class OffsetPredictor:
    """A base predictor shifted by a per-record calibration offset."""

    def __init__(self, base, offset):
        self.base = base
        self.offset = float(offset)

    def predict(self, window):
        return self.base.predict(window) + self.offset


def naive_calibrate(record_windows, label="sbp", calib_windows=3):
    """Constant predictor from the first ``calib_windows`` ground truths.

    Raises
    ------
    CalibrationError
        If the record has fewer than ``calib_windows`` labeled windows.
    """
    ordered = sorted(record_windows, key=lambda w: w.start_index)
    if len(ordered) < calib_windows:
        raise CalibrationError(
            f"naive calibration needs {calib_windows} windows, got {len(ordered)}"
        )
    values = [_truth(w, label) for w in ordered[:calib_windows]]
    return ConstantPredictor(np.mean(values))


def offset_calibrate(base, record_windows, label="sbp", calib_windows=1):
    """Shift a base predictor by its error on the record's first window(s).

    The offset is the mean of (truth - base prediction) over the first
    ``calib_windows`` windows, so with the default of one window the
    calibrated predictor is exact there by construction.
    """
    ordered = sorted(record_windows, key=lambda w: w.start_index)
    if len(ordered) < calib_windows:
        raise CalibrationError(
            f"offset calibration needs {calib_windows} windows, got {len(ordered)}"
        )
    offsets = [_truth(w, label) - base.predict(w) for w in ordered[:calib_windows]]
    return OffsetPredictor(base, np.mean(offsets))


@dataclass
class EvalResult:
    bias: float   # mean(pred - truth)
    sd: float     # population std of (pred - truth)
    mae: float
    n: int
    errors: np.ndarray

    @classmethod
    def from_errors(cls, errors):
        errors = np.asarray(errors, dtype=np.float64)
        return cls(float(errors.mean()), float(errors.std()),
                   float(np.abs(errors).mean()), len(errors), errors)


def evaluate(predictions, truths):
    """Bias / SD / MAE of predictions against ground truth.

    Raises
    ------
    ValueError
        On length mismatch or fewer than 2 samples.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths must have equal length")
    if len(predictions) < 2:
        raise ValueError("evaluate needs at least 2 samples")
    return EvalResult.from_errors(predictions - truths)


def evaluate_predictor(predictor, windows, label="sbp"):
    preds = [predictor.predict(w) for w in windows]
    truths = [_truth(w, label) for w in windows]
    return evaluate(preds, truths)


@dataclass
class DriftPoint:
    bucket: int
    elapsed_start_s: float
    result: EvalResult


def drift_curve(predictor, windows, bucket_s, label="sbp", elapsed_s=None):
    """Per-bucket evaluation as time since calibration grows.

    ``elapsed_s`` gives each window's elapsed time since calibration; by
    default it is the window start time relative to the earliest window.
    Buckets with fewer than 2 windows are omitted.
    """
    if elapsed_s is None:
        t0 = min(w.start_s for w in windows)
        elapsed_s = [w.start_s - t0 for w in windows]
    by_bucket = {}
    for w, t in zip(windows, elapsed_s):
        by_bucket.setdefault(int(t // bucket_s), []).append(w)
    curve = []
    for bucket in sorted(by_bucket):
        group = by_bucket[bucket]
        if len(group) < 2:
            continue
        curve.append(DriftPoint(bucket, bucket * bucket_s,
                                evaluate_predictor(predictor, group, label)))
    return curve


AAMI_BIAS_LIMIT = 5.0
AAMI_SD_LIMIT = 8.0
AAMI_MIN_SUBJECTS = 85
AAMI_TAIL_FRACTION = 0.10
AAMI_HIGH_SBP = 180.0
AAMI_LOW_SBP = 100.0


@dataclass
class AamiResult:
    bias_ok: bool
    sd_ok: bool
    cohort_ok: bool
    compliant: bool
    bias: float
    sd: float
    n_subjects: int
    high_fraction: float
    low_fraction: float


def aami_check(result, cohort_sbp):
    """AAMI compliance: |bias| <= 5 mmHg, SD <= 8 mmHg, adequate cohort.

    ``cohort_sbp`` holds one representative SBP per subject; the cohort
    criterion needs >= 85 subjects with >= 10% above 180 mmHg and >= 10%
    under 100 mmHg.  All thresholds are inclusive.
    """
    cohort_sbp = np.asarray(cohort_sbp, dtype=np.float64)
    n = len(cohort_sbp)
    high = float(np.mean(cohort_sbp > AAMI_HIGH_SBP)) if n else 0.0
    low = float(np.mean(cohort_sbp < AAMI_LOW_SBP)) if n else 0.0
    bias_ok = abs(result.bias) <= AAMI_BIAS_LIMIT
    sd_ok = result.sd <= AAMI_SD_LIMIT
    cohort_ok = (n >= AAMI_MIN_SUBJECTS
                 and high >= AAMI_TAIL_FRACTION
                 and low >= AAMI_TAIL_FRACTION)
    return AamiResult(bias_ok, sd_ok, cohort_ok, bias_ok and sd_ok and cohort_ok,
                      result.bias, result.sd, n, high, low)


# grade -> required cumulative percentages at |error| <= 5, 10, 15 mmHg
BHS_THRESHOLDS = {
    "A": (60.0, 85.0, 95.0),
    "B": (50.0, 75.0, 90.0),
    "C": (40.0, 65.0, 85.0),
}


@dataclass
class BhsResult:
    pct_5: float
    pct_10: float
    pct_15: float
    grade: str

    @property
    def percentages(self):
        return (self.pct_5, self.pct_10, self.pct_15)


def bhs_grade(errors):
    """BHS grade from cumulative absolute-error percentages.

    The grade is the best row whose three thresholds are all met
    (inclusively); otherwise "Fail".
    """
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        raise ValueError("bhs_grade needs at least one error")
    abs_err = np.abs(errors)
    pcts = tuple(100.0 * float(np.mean(abs_err <= t)) for t in (5.0, 10.0, 15.0))
    grade = "Fail"
    for name, required in BHS_THRESHOLDS.items():
        if all(p >= r for p, r in zip(pcts, required)):
            grade = name
            break
    return BhsResult(*pcts, grade)
