"""Audit explanation fidelity across protected subgroups."""

__version__ = "0.1.0"

from .errors import AuditError, ConfigInvalid  # noqa: E402
from .metrics import Metric, FidelityPairs, gap_report, preservation_check  # noqa: E402

__all__ = ["__version__", "AuditError", "ConfigInvalid", "Metric", "FidelityPairs",
           "gap_report", "preservation_check"]
