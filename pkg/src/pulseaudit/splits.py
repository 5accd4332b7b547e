"""Train/test split generation, leakage auditing, and label-range filtering.

Three split schemes differ only in the unit that gets partitioned 80/20:

* NO_OVERLAP: whole patients (the clean scheme),
* DOMAIN_OVERLAP: whole records, so one patient's records can land on both
  sides (identity leaks),
* DATA_OVERLAP: individual possibly-overlapping windows, so train and test
  windows can share raw samples.

The audit is exact and independent of signal content: data overlap is
detected by intersecting sample-index intervals per record, domain overlap
by patient identity present on both sides.
"""

import csv
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .signals import segment
from .util import PulseAuditError

logger = logging.getLogger(__name__)


class SplitScheme(Enum):
    NO_OVERLAP = "nooverlap"
    DOMAIN_OVERLAP = "domainoverlap"
    DATA_OVERLAP = "dataoverlap"


class SplitError(PulseAuditError):
    """The dataset cannot support the requested split."""


@dataclass
class SplitPlan:
    scheme: SplitScheme = SplitScheme.NO_OVERLAP
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class SplitEntry:
    patient_id: str
    record_id: str
    start_index: int
    length: int
    set_name: str  # "train" | "test"

    @property
    def end_index(self):
        return self.start_index + self.length


@dataclass
class SplitAssignment:
    entries: list
    scheme: SplitScheme | None = None
    seed: int | None = None

    def __post_init__(self):
        for e in self.entries:
            if e.set_name not in ("train", "test"):
                raise ValueError(f"unknown set name {e.set_name!r}")

    def subset(self, set_name):
        return [e for e in self.entries if e.set_name == set_name]


@dataclass
class OverlapPair:
    train: SplitEntry
    test: SplitEntry
    shared_samples: int


@dataclass
class LeakageReport:
    data_overlap_pairs: list
    domain_overlap_patients: set
    verdicts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.verdicts = {
            "data_overlap": "contaminated" if self.data_overlap_pairs else "clean",
            "domain_overlap": "contaminated" if self.domain_overlap_patients else "clean",
        }

    @property
    def clean(self):
        return not self.data_overlap_pairs and not self.domain_overlap_patients


def _cut(units, test_fraction, rng):
    """Partition units into (train, test) with floored test size, >= 1 each."""
    if len(units) < 2:
        raise SplitError(f"need at least 2 units to split, got {len(units)}")
    order = rng.permutation(len(units))
    n_test = max(1, int(np.floor(test_fraction * len(units))))
    if n_test >= len(units):
        n_test = len(units) - 1
    test = {units[i] for i in order[:n_test]}
    return test


def make_split(ds, spec, plan):
    """Generate windows per ``spec`` and assign each to train or test.

    Deterministic given ``plan.seed``.  Raises SplitError for fewer than 2
    patients (NO_OVERLAP) or records (DOMAIN_OVERLAP) or windows
    (DATA_OVERLAP).
    """
    if not ds.records:
        raise SplitError("dataset has no records")
    windows = []
    for rec in ds.records:
        windows.extend(segment(rec, spec))
    windows.sort(key=lambda w: (w.patient_id, w.record_id, w.start_index))
    rng = np.random.default_rng(plan.seed)

    if plan.scheme is SplitScheme.NO_OVERLAP:
        patients = sorted({w.patient_id for w in windows})
        test_units = _cut(patients, plan.test_fraction, rng)
        in_test = lambda w: w.patient_id in test_units
    elif plan.scheme is SplitScheme.DOMAIN_OVERLAP:
        records = sorted({w.record_id for w in windows})
        test_units = _cut(records, plan.test_fraction, rng)
        in_test = lambda w: w.record_id in test_units
    else:
        keys = [(w.patient_id, w.record_id, w.start_index) for w in windows]
        test_units = _cut(keys, plan.test_fraction, rng)
        in_test = lambda w: (w.patient_id, w.record_id, w.start_index) in test_units

    entries = [
        SplitEntry(w.patient_id, w.record_id, w.start_index, w.length,
                   "test" if in_test(w) else "train")
        for w in windows
    ]
    return SplitAssignment(entries, plan.scheme, plan.seed)


def audit_split(assignment):
    """Find every train/test contamination in an assignment, exactly.

    Data overlap: all (train, test) window pairs from the same record whose
    sample-index intervals intersect, with the shared sample count.
    Domain overlap: patients contributing windows to both sets.
    """
    by_record_train = {}
    test_entries = []
    train_patients = set()
    test_patients = set()
    for e in assignment.entries:
        if e.set_name == "train":
            by_record_train.setdefault(e.record_id, []).append(e)
            train_patients.add(e.patient_id)
        else:
            test_entries.append(e)
            test_patients.add(e.patient_id)

    pairs = []
    for rec_id, train_list in by_record_train.items():
        train_list.sort(key=lambda e: e.start_index)
        starts = [e.start_index for e in train_list]
        for te in test_entries:
            if te.record_id != rec_id:
                continue
            # train windows starting at or after te.end cannot intersect
            hi = bisect_left(starts, te.end_index)
            for tr in train_list[:hi]:
                shared = min(tr.end_index, te.end_index) - max(tr.start_index, te.start_index)
                if shared > 0:
                    pairs.append(OverlapPair(tr, te, shared))
    pairs.sort(key=lambda p: (p.train.record_id, p.train.start_index, p.test.start_index))
    return LeakageReport(pairs, train_patients & test_patients)


@dataclass
class RangeFilterSummary:
    discarded_fraction: float
    before: dict
    after: dict


def _label_stats(values):
    if len(values) == 0:
        return {"n": 0, "mean": None, "std": None, "min": None, "max": None}
    arr = np.asarray(values)
    return {"n": int(arr.size), "mean": float(arr.mean()), "std": float(arr.std()),
            "min": float(arr.min()), "max": float(arr.max())}


def range_filter(windows, label, lo, hi):
    """Keep windows whose label lies in [lo, hi].

    Returns ``(kept_windows, discarded_fraction, summary)`` where the
    summary carries before/after label statistics.  An empty result is a
    logged warning, not an error.
    """
    if not lo < hi:
        raise ValueError("range_filter needs lo < hi")
    values = []
    for w in windows:
        if label not in w.labels:
            raise PulseAuditError(
                f"window ({w.patient_id}, {w.record_id}, {w.start_index}) "
                f"is missing label {label!r}"
            )
        values.append(w.labels[label])
    values = np.asarray(values)
    keep = (values >= lo) & (values <= hi)
    kept = [w for w, k in zip(windows, keep) if k]
    if windows and not kept:
        logger.warning("range filter [%s, %s] on %r discarded every window", lo, hi, label)
    discarded = 1.0 - (len(kept) / len(windows)) if windows else 0.0
    summary = RangeFilterSummary(discarded, _label_stats(values), _label_stats(values[keep]))
    return kept, discarded, summary


SPLIT_CSV_HEADER = ["patient_id", "record_id", "start_index", "length", "set"]


def write_split(assignment, path):
    """Write the split interchange CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SPLIT_CSV_HEADER)
        for e in assignment.entries:
            writer.writerow([e.patient_id, e.record_id, e.start_index, e.length, e.set_name])


def read_split(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SPLIT_CSV_HEADER:
            raise PulseAuditError(f"split file {path} has unexpected header {header}")
        entries = [
            SplitEntry(row[0], row[1], int(row[2]), int(row[3]), row[4])
            for row in reader if row
        ]
    return SplitAssignment(entries)
