"""Mutual information between features and a target, in bits.

The MI estimator is the k-nearest-neighbour one (variant 1) with Chebyshev
(max-norm) balls: for each sample the distance ``eps_i`` to its k-th
neighbour in the joint space is found, marginal neighbours strictly inside
``eps_i`` are counted, and

    MI_nats = psi(k) + psi(N) - mean_i[psi(n_x(i) + 1) + psi(n_y(i) + 1)]

Target entropy comes either from an equal-width histogram (Miller-Madow
bias corrected; the default, so the Info-Fraction denominator is always
nonnegative) or from the Kozachenko-Leonenko differential estimator.
Info-Fraction = MI / target entropy is the share of target uncertainty the
input explains.

Repeated values (heavily quantized clinical labels) are de-tied with a
deterministic jitter of amplitude 1e-10 whose seed derives from the column
bytes, so results are reproducible and symmetric in the arguments.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .util import PulseAuditError

logger = logging.getLogger(__name__)

MAX_FEATURE_DIM = 32   # k-NN MI is unreliable in high dimension; reduce first
JITTER_AMPLITUDE = 1e-10


class SampleSizeError(PulseAuditError):
    """Not enough samples for the requested estimate."""


class ZeroEntropyError(PulseAuditError):
    """The target is constant, so Info-Fraction is undefined."""


class EntropyMode(Enum):
    HISTOGRAM = "hist"
    KNN = "knn"


def digamma(x):
    """Digamma via the ascending recurrence plus the asymptotic series.

    Arguments below 8 are pushed up with psi(x) = psi(x + 1) - 1/x, then
    the Stirling-type series with Bernoulli terms through x**-8 is applied;
    accurate to ~1e-11 for positive arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    if np.any(x <= 0):
        raise ValueError("digamma defined here for positive arguments only")
    result = np.zeros_like(x)
    mask = x < 8.0
    while mask.any():
        result[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
        mask = x < 8.0
    inv2 = 1.0 / (x * x)
    series = np.log(x) - 0.5 / x - inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 / 240)))
    result += series
    return float(result[0]) if scalar else result


@dataclass
class SampleMatrix:
    """Feature matrix X (N x d) and target vector Y (N) with names."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple = ()
    target_name: str = "target"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        if len(X) != len(Y):
            raise ValueError("X and Y must have the same number of samples")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
            raise ValueError("sample matrix must not contain non-finite entries")
        if not self.feature_names:
            self.feature_names = tuple(f"x{i}" for i in range(X.shape[1]))
        if len(self.feature_names) != X.shape[1]:
            raise ValueError("one feature name per column required")
        if len(X) < 10 * X.shape[1]:
            logger.warning("only %d samples for %d features; MI estimate may be unstable",
                           len(X), X.shape[1])
        self.X = X
        self.Y = Y

    @property
    def n(self):
        return len(self.Y)

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        return SampleMatrix(self.X[idx], self.Y[idx], self.feature_names, self.target_name)


def _standardize(col):
    mu = col.mean()
    sd = col.std()
    return (col - mu) / sd if sd > 0 else col - mu


def _jittered(cols):
    """Add deterministic tie-breaking jitter to each column.

    Seeds derive from the column bytes, so results are reproducible and
    symmetric in the argument order; repeated identical columns (Y = X)
    get distinct streams via an occurrence counter, otherwise their ties
    would survive the jitter.
    """
    seen = {}
    out = []
    for col in cols:
        digest = hashlib.sha256(np.ascontiguousarray(col).tobytes()).digest()
        occurrence = seen.get(digest, 0)
        seen[digest] = occurrence + 1
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little") + occurrence)
        out.append(col + JITTER_AMPLITUDE * rng.standard_normal(len(col)))
    return out


def _marginal_counts(M, radii):
    """Points strictly within radii of each row, excluding the row itself."""
    if M.shape[1] == 1:
        order = np.sort(M[:, 0])
        v = M[:, 0]
        hi = np.searchsorted(order, v + radii, side="left")
        lo = np.searchsorted(order, v - radii, side="right")
        return hi - lo - 1
    tree = cKDTree(M)
    counts = tree.query_ball_point(M, radii, p=np.inf, return_length=True)
    return np.asarray(counts) - 1


def ksg_mi_raw(m, k=3):
    """Unclamped k-NN MI estimate, in bits."""
    if m.d > MAX_FEATURE_DIM:
        raise ValueError(f"feature dimension {m.d} exceeds {MAX_FEATURE_DIM}; "
                         "reduce dimensionality first")
    N = m.n
    if N <= k + 1:
        raise SampleSizeError(f"need more than k+1={k + 1} samples, got {N}")
    if np.ptp(m.Y) == 0.0:
        raise ZeroEntropyError("zero-entropy target: the target is constant")
    cols = _jittered([_standardize(m.X[:, j]) for j in range(m.d)]
                     + [_standardize(m.Y)])
    X = np.column_stack(cols[:-1])
    Y = cols[-1][:, None]
    joint = np.hstack([X, Y])
    tree = cKDTree(joint)
    eps = tree.query(joint, k=k + 1, p=np.inf)[0][:, k]
    radii = np.nextafter(eps, 0.0)  # strict inequality at the ball boundary
    n_x = _marginal_counts(X, radii)
    n_y = _marginal_counts(Y, radii)
    nats = digamma(k) + digamma(N) - np.mean(digamma(n_x + 1) + digamma(n_y + 1))
    return float(nats / np.log(2))


def ksg_mi(m, k=3):
    """k-NN MI estimate in bits, clamped to be nonnegative.

    Small-sample estimates can dip below zero; those are clamped to 0 with
    a logged warning.
    """
    raw = ksg_mi_raw(m, k)
    if raw < 0.0:
        logger.warning("negative MI estimate %.4f bits clamped to 0", raw)
        return 0.0
    return raw


def freedman_diaconis_width(y):
    """2 * IQR * N^(-1/3); falls back to range/sqrt(N) when the IQR is 0."""
    q75, q25 = np.percentile(y, [75, 25])
    width = 2.0 * (q75 - q25) * len(y) ** (-1.0 / 3.0)
    if width <= 0:
        width = np.ptp(y) / max(1.0, np.sqrt(len(y)))
    return float(width)


def target_entropy(y, mode=EntropyMode.HISTOGRAM, bin_width=None, k=3):
    """Entropy of the target variable, in bits.

    HISTOGRAM mode: Shannon entropy of counts over equal-width bins
    (Freedman-Diaconis width unless ``bin_width`` is given), with the
    Miller-Madow bias correction.  KNN mode: Kozachenko-Leonenko
    differential entropy, which may legitimately be negative; a warning is
    logged when it is.

    Raises
    ------
    ZeroEntropyError
        For a constant target.
    SampleSizeError
        HISTOGRAM mode needs N >= 100; KNN mode needs N > k + 1.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.ptp(y) == 0.0:
        raise ZeroEntropyError("zero-entropy target: the target is constant")
    mode = EntropyMode(mode)
    N = len(y)
    if mode is EntropyMode.HISTOGRAM:
        if N < 100:
            raise SampleSizeError(f"histogram entropy needs N >= 100, got {N}")
        width = float(bin_width) if bin_width else freedman_diaconis_width(y)
        lo = np.floor(y.min() / width) * width
        n_bins = int(np.ceil((y.max() - lo) / width)) + 1
        counts, _ = np.histogram(y, bins=lo + width * np.arange(n_bins + 1))
        p = counts[counts > 0] / N
        plugin = -np.sum(p * np.log2(p))
        return float(plugin + (len(p) - 1) / (2.0 * N * np.log(2)))
    if N <= k + 1:
        raise SampleSizeError(f"need more than k+1={k + 1} samples, got {N}")
    yj = _jittered([y])[0][:, None]
    tree = cKDTree(yj)
    eps = tree.query(yj, k=k + 1, p=np.inf)[0][:, k]
    nats = digamma(N) - digamma(k) + np.log(2.0) + np.mean(np.log(eps))
    bits = float(nats / np.log(2))
    if bits < 0:
        logger.warning("differential entropy is negative (%.4f bits)", bits)
    return bits


def info_fraction(mi_bits, entropy_bits):
    """MI as a fraction of target entropy."""
    if entropy_bits <= 0:
        raise ZeroEntropyError("info_fraction undefined for zero target entropy")
    return mi_bits / entropy_bits


# MI exceeding the target entropy by more than this is flagged as an
# estimator inconsistency in MiEstimate.warnings.
MI_ENTROPY_TOLERANCE_BITS = 0.1


@dataclass
class MiEstimate:
    mi_bits: float
    entropy_bits: float
    info_fraction: float
    k: int
    n: int
    warnings: list = field(default_factory=list)


def estimate(m, k=3, entropy_mode=EntropyMode.HISTOGRAM, bin_width=None):
    """Combined MI + entropy + Info-Fraction with consistency flags."""
    raw = ksg_mi_raw(m, k)
    warnings = []
    mi_bits = raw
    if raw < 0.0:
        warnings.append(f"negative MI estimate {raw:.4f} bits clamped to 0")
        mi_bits = 0.0
    entropy_bits = target_entropy(m.Y, entropy_mode, bin_width, k)
    if entropy_bits < 0:
        warnings.append(f"differential target entropy is negative ({entropy_bits:.4f} bits)")
    if mi_bits > entropy_bits + MI_ENTROPY_TOLERANCE_BITS:
        warnings.append(
            f"MI {mi_bits:.4f} bits exceeds target entropy {entropy_bits:.4f} bits"
        )
    for w in warnings:
        logger.warning("%s", w)
    frac = info_fraction(mi_bits, entropy_bits) if entropy_bits > 0 else float("nan")
    return MiEstimate(mi_bits, entropy_bits, frac, k, m.n, warnings)


@dataclass
class BootstrapPoint:
    fraction: float
    mi_bits: np.ndarray
    mean: float
    std: float


@dataclass
class BootstrapCurve:
    points: list
    runs: int
    k: int
    seed: int


def bootstrap_mi(m, fractions, runs=20, seed=0, k=3):
    """MI versus dataset size by repeated uniform subsampling.

    For each fraction, ``runs`` subsamples are drawn without replacement
    (independently seeded per run) and the MI recomputed on each.  A
    fraction of 1.0 uses the full data, so all its runs are identical and
    its spread is zero.

    Raises
    ------
    SampleSizeError
        If the smallest fraction leaves k + 1 samples or fewer.
    """
    points = []
    for fi, fraction in enumerate(sorted(fractions)):
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {fraction}")
        size = int(round(fraction * m.n))
        if size <= k + 1:
            raise SampleSizeError(
                f"fraction {fraction} leaves {size} samples; need more than {k + 1}"
            )
        values = np.empty(runs)
        for run in range(runs):
            if fraction >= 1.0:
                sub = m
            else:
                rng = np.random.default_rng(np.random.SeedSequence([seed, fi, run]))
                sub = m.subset(np.sort(rng.choice(m.n, size=size, replace=False)))
            values[run] = ksg_mi(sub, k)
        points.append(BootstrapPoint(fraction, values, float(values.mean()),
                                     float(values.std())))
    return BootstrapCurve(points, runs, k, seed)


def per_feature_mi(m, k=3):
    """MI of each feature column alone against the target, in bits."""
    return {
        name: ksg_mi(SampleMatrix(m.X[:, j], m.Y, (name,), m.target_name), k)
        for j, name in enumerate(m.feature_names)
    }
