"""Auditing toolkit for clinical binary-risk models.

Validation, calibration, decision curves, group fairness, explanations,
differential privacy, federated averaging and adversarial attacks, built on
numpy models that expose analytic gradients.
"""

from .errors import ClinAuditError, DataError, DivergenceError, NumericError, SingleClassWarning
from .report import SCHEMA_VERSION

__version__ = "0.1.0"

__all__ = [
    "ClinAuditError", "DataError", "DivergenceError", "NumericError", "SingleClassWarning",
    "SCHEMA_VERSION", "__version__",
]
