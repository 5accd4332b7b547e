"""Shared helpers: error base class, normalization, deterministic seeding."""

import hashlib

import numpy as np


class PulseAuditError(Exception):
    """Base class for all errors raised by this package."""


def znormalize(x):
    """Z-normalize a 1-D array (zero mean, unit population std).

    Constant or degenerate inputs map to an all-zero array rather than
    raising, so batch pipelines keep moving.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    if not np.isfinite(sd) or sd <= 0.0:
        return np.zeros_like(x)
    return (x - mu) / sd


def stable_seed(*parts):
    """Derive a reproducible 64-bit seed from arbitrary parts.

    Uses SHA-256 of the repr of each part, so strings and ints hash the
    same way on every platform and run (unlike Python's builtin hash).
    """
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")
