"""Multi-valued mapping search.

Finds window pairs that are close in input space (Euclidean distance after
cross-correlation alignment of z-normalized windows) yet far apart in label
space.  Many such pairs mean the input cannot be a well-conditioned
predictor of the label.

The all-pairs scan evaluates exactly the same per-pair quantity as
:func:`distance`, but lag-major in blocked matrix products, so datasets of
~10^4 windows finish in seconds on one core.  Equality with the naive
pair-at-a-time evaluation is covered by the test suite.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .util import PulseAuditError, znormalize

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("none", "per-sample", "mean-square")


class Scope(Enum):
    INTRA_PATIENT = "intra"
    INTER_PATIENT = "inter"


class InsufficientPairsError(PulseAuditError):
    """Too few consecutive window pairs to calibrate a threshold."""


@dataclass
class MvmConfig:
    t_i: float  # input-space threshold on the aligned distance
    t_o: float  # label-space threshold, in label units
    window_length_s: float = 2.0
    max_lag_s: float = 0.25
    scope: Scope = Scope.INTRA_PATIENT
    normalization: str = "none"

    def __post_init__(self):
        if self.t_i <= 0 or self.t_o <= 0:
            raise ValueError("t_i and t_o must be positive")
        if not self.max_lag_s < self.window_length_s / 2:
            raise ValueError("max_lag_s must be below half the window length")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class MvmMatch:
    window_i: tuple  # (patient_id, record_id, start_index)
    window_j: tuple
    input_distance: float
    label_gap: float
    lag: int


@dataclass
class MvmReport:
    total_windows: int
    matched_windows: int
    match_rate: float
    match_pairs: int
    scope: Scope
    config: MvmConfig
    matched_flags: np.ndarray = field(repr=False, default=None)


def _lag_order(max_lag):
    """Candidate lags ordered 0, -1, +1, -2, +2, ... so keeping the first
    strict maximum implements the smallest-|lag| tie break."""
    return sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l))


def align_xcorr(a, b, max_lag):
    """Best cross-correlation alignment of two equal-length windows.

    Inputs are assumed z-normalized already; no rescaling happens here.
    The returned lag is the index shift of ``a`` relative to ``b``:
    ``a[t + lag]`` lines up with ``b[t]``, so if ``b`` is ``a`` delayed by
    ``d`` samples the result is ``-d``.  On equal correlation the smallest
    ``|lag|`` wins (then the smaller lag), deterministically.

    Returns
    -------
    (lag, a_seg, b_seg)
        The overlapping regions of both inputs at the chosen lag, each of
        length ``len(a) - |lag|``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    if len(b) != n:
        raise ValueError("align_xcorr needs equal-length inputs")
    if not max_lag < n / 2:
        raise ValueError("max_lag must be below half the window length")
    corr = np.correlate(a, b, mode="full")  # corr[n-1+s] = sum_t a[t+s]*b[t]
    best_lag = 0
    best_c = -np.inf
    for lag in _lag_order(max_lag):
        c = corr[n - 1 + lag]
        if c > best_c:
            best_c = c
            best_lag = lag
    if best_lag >= 0:
        return best_lag, a[best_lag:], b[:n - best_lag]
    return best_lag, a[:n + best_lag], b[-best_lag:]


def _reduce(sq_sum, n, overlap, normalization, abs_sum=None):
    if normalization == "none":
        return np.sqrt(np.maximum(sq_sum, 0.0) * (n / overlap))
    if normalization == "mean-square":
        return sq_sum / overlap
    return abs_sum / overlap  # per-sample: mean absolute difference


def distance(a, b, max_lag, normalization="none"):
    """Distance between two windows after alignment.

    ``none`` (default): L2 norm of the aligned difference, rescaled by
    ``sqrt(n / overlap)`` so values are comparable across lags.
    ``mean-square``: mean squared difference over the overlap.
    ``per-sample``: mean absolute difference over the overlap.

    Inputs are assumed z-normalized; the result is symmetric in (a, b)
    and zero for identical inputs.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    lag, a_seg, b_seg = align_xcorr(a, b, max_lag)
    diff = a_seg - b_seg
    n = len(a)
    abs_sum = np.sum(np.abs(diff)) if normalization == "per-sample" else None
    return float(_reduce(np.dot(diff, diff), n, n - abs(lag), normalization, abs_sum))


@dataclass
class ThresholdCalibration:
    threshold: float
    percentile: float
    distances: np.ndarray
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray


def calibrate_threshold(windows, percentile=90.0, max_lag_s=0.25,
                        normalization="none", bins=50):
    """Empirical input threshold from consecutive-window distances.

    Computes the aligned distance between each pair of consecutive windows
    within a record (the irreducible short-term variation of the signal)
    and returns the requested percentile of that distribution as the
    threshold, along with the full distance histogram.  The percentile is
    an order statistic of the observed distances (no interpolation).

    Raises
    ------
    InsufficientPairsError
        With fewer than 10 consecutive pairs.
    """
    by_record = {}
    for win in windows:
        by_record.setdefault((win.patient_id, win.record_id), []).append(win)
    dists = []
    for group in by_record.values():
        group.sort(key=lambda w: w.start_index)
        for prev, cur in zip(group, group[1:]):
            max_lag = int(round(max_lag_s * prev.signal.rate_hz))
            dists.append(distance(znormalize(prev.signal.samples),
                                  znormalize(cur.signal.samples),
                                  max_lag, normalization))
    if len(dists) < 10:
        raise InsufficientPairsError(
            f"threshold calibration needs >= 10 consecutive pairs, got {len(dists)}"
        )
    dists = np.asarray(dists)
    threshold = float(np.percentile(dists, percentile, method="lower"))
    counts, edges = np.histogram(dists, bins=bins)
    return ThresholdCalibration(threshold, percentile, dists, counts, edges)


def _label_values(windows, label):
    y = np.empty(len(windows))
    for k, w in enumerate(windows):
        if label not in w.labels:
            raise PulseAuditError(
                f"window ({w.patient_id}, {w.record_id}, {w.start_index}) "
                f"is missing label {label!r}"
            )
        y[k] = w.labels[label]
    return y


def scan(windows, label, cfg, max_examples=None):
    """Exhaustive multi-valued-mapping scan over window pairs.

    A window is *matched* when some other window in scope sits within
    ``cfg.t_i`` in aligned input distance while its label differs by at
    least ``cfg.t_o``.  INTRA_PATIENT scope restricts pairs to equal
    patient_id, INTER_PATIENT to different ones.  Results follow set
    semantics: they do not depend on the ordering of ``windows``.

    Parameters
    ----------
    windows : list of Window
        Equal-length windows, each carrying the requested label.
    label : str
    cfg : MvmConfig
    max_examples : int or None
        Cap on retained MvmMatch objects; match *counting* is unaffected.
        None keeps every matching pair.

    Returns
    -------
    (MvmReport, list of MvmMatch)
    """
    N = len(windows)
    if N == 0:
        return MvmReport(0, 0, 0.0, 0, cfg.scope, cfg, np.zeros(0, dtype=bool)), []
    lengths = {w.length for w in windows}
    if len(lengths) != 1:
        raise ValueError(f"scan needs equal window lengths, got {sorted(lengths)}")
    if cfg.normalization == "per-sample":
        return _scan_pairwise(windows, label, cfg, max_examples)

    n = lengths.pop()
    y = _label_values(windows, label)
    rate = windows[0].signal.rate_hz
    max_lag = int(round(cfg.max_lag_s * rate))
    Z = np.stack([znormalize(w.signal.samples) for w in windows])
    prefix = np.concatenate([np.zeros((N, 1)), np.cumsum(Z * Z, axis=1)], axis=1)
    totals = prefix[:, -1]
    patients = np.array([w.patient_id for w in windows])
    prov = [(w.patient_id, w.record_id, w.start_index) for w in windows]

    matched = np.zeros(N, dtype=bool)
    matches = []
    pair_count = 0

    def scan_block(rows, cols, in_scope):
        nonlocal pair_count
        gap = np.abs(y[rows][:, None] - y[cols][None, :])
        cand = in_scope & (gap >= cfg.t_o) & (cols[None, :] > rows[:, None])
        if not cand.any():
            return
        Zi, Zj = Z[rows], Z[cols]
        best_c = np.full(cand.shape, -np.inf)
        best_lag = np.zeros(cand.shape, dtype=np.int32)
        for lag in _lag_order(max_lag):
            if lag >= 0:
                c = Zi[:, lag:] @ Zj[:, :n - lag].T
            else:
                c = Zi[:, :n + lag] @ Zj[:, -lag:].T
            better = c > best_c
            best_c[better] = c[better]
            best_lag[better] = lag
        pos = best_lag >= 0
        # aligned-segment energies via prefix sums of squares
        cut_a = np.where(pos, best_lag, n + best_lag)
        take_a = prefix[rows[:, None], cut_a]
        e_a = np.where(pos, totals[rows][:, None] - take_a, take_a)
        cut_b = np.where(pos, n - best_lag, -best_lag)
        take_b = prefix[cols[None, :], cut_b]
        e_b = np.where(pos, take_b, totals[cols][None, :] - take_b)
        overlap = n - np.abs(best_lag)
        dist = _reduce(e_a + e_b - 2.0 * best_c, n, overlap, cfg.normalization)
        hit = cand & (dist <= cfg.t_i)
        ii, jj = np.nonzero(hit)
        pair_count += len(ii)
        matched[rows[ii]] = True
        matched[cols[jj]] = True
        for bi, bj in zip(ii, jj):
            if max_examples is not None and len(matches) >= max_examples:
                break
            gi, gj = rows[bi], cols[bj]
            matches.append(MvmMatch(prov[gi], prov[gj],
                                    float(dist[bi, bj]), float(gap[bi, bj]),
                                    int(best_lag[bi, bj])))

    if cfg.scope is Scope.INTRA_PATIENT:
        # in-scope pairs never cross patients, so scan per-patient groups
        groups = [np.nonzero(patients == pid)[0] for pid in np.unique(patients)]
    else:
        groups = [np.arange(N)]
    for idx in groups:
        block = max(16, (4 << 20) // max(len(idx), 1))
        for r0 in range(0, len(idx), block):
            rows = idx[r0:min(r0 + block, len(idx))]
            cols = idx[r0:]  # j > i handled by the candidate mask
            if cfg.scope is Scope.INTRA_PATIENT:
                in_scope = np.ones((len(rows), len(cols)), dtype=bool)
            else:
                in_scope = patients[rows][:, None] != patients[cols][None, :]
            scan_block(rows, cols, in_scope)

    matches.sort(key=lambda m: (m.window_i, m.window_j))
    report = MvmReport(N, int(matched.sum()), float(matched.mean()),
                       pair_count, cfg.scope, cfg, matched)
    return report, matches


def _scan_pairwise(windows, label, cfg, max_examples=None):
    """Pair-at-a-time scan; only route for the per-sample (L1) normalization."""
    N = len(windows)
    y = _label_values(windows, label)
    rate = windows[0].signal.rate_hz
    max_lag = int(round(cfg.max_lag_s * rate))
    Z = [znormalize(w.signal.samples) for w in windows]
    patients = [w.patient_id for w in windows]
    prov = [(w.patient_id, w.record_id, w.start_index) for w in windows]
    matched = np.zeros(N, dtype=bool)
    matches = []
    pair_count = 0
    for i in range(N):
        for j in range(i + 1, N):
            same = patients[i] == patients[j]
            if (cfg.scope is Scope.INTRA_PATIENT) != same:
                continue
            gap = abs(y[i] - y[j])
            if gap < cfg.t_o:
                continue
            d = distance(Z[i], Z[j], max_lag, cfg.normalization)
            if d <= cfg.t_i:
                matched[i] = matched[j] = True
                pair_count += 1
                if max_examples is None or len(matches) < max_examples:
                    lag, _, _ = align_xcorr(Z[i], Z[j], max_lag)
                    matches.append(MvmMatch(prov[i], prov[j], float(d), float(gap), lag))
    report = MvmReport(N, int(matched.sum()), float(matched.mean()) if N else 0.0,
                       pair_count, cfg.scope, cfg, matched)
    return report, matches
