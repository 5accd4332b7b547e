"""pulseaudit: is this signal a well-conditioned predictor of that label?

Tools for auditing signal-to-label prediction tasks before training
anything: a multi-valued-mapping search (near-identical inputs with very
different labels), k-NN mutual information with the Info-Fraction ratio,
train/test leakage audits, calibration baselines, and AAMI/BHS grading,
plus the supporting signal pipeline and a deterministic synthetic data
generator.
"""

__version__ = "0.1.0"

from .util import PulseAuditError, znormalize

__all__ = ["PulseAuditError", "znormalize", "__version__"]
