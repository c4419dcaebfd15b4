"""
errors.py

Purpose:
--------
Domain errors shared by every package.

All of them are ValueError subclasses (or FileNotFoundError for paths) so
callers that only care about "bad input" can keep catching ValueError.
"""

from typing import Any, Dict, Optional


class ShapeError(ValueError):
    """Tensor extents do not agree with what an operation requires."""


class FormatError(ValueError):
    """A file on disk does not have the layout its loader expects."""


class ConfigError(ValueError):
    """Invalid configuration or network construction request."""


class LabelError(ValueError):
    """Validation failure on labels, ids or splits."""


class DivergenceError(ValueError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message: str, parameter: Optional[str] = None,
                 step: Optional[int] = None, phase: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter
        self.step = step
        self.phase = phase

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "event": "divergence",
            "message": str(self),
            "parameter": self.parameter,
            "step": self.step,
            "phase": self.phase,
        }


class MissingPathError(FileNotFoundError):
    """An expected file or directory is absent."""


class FingerprintMismatchError(ValueError):
    """A checkpoint was written for a different layer schedule."""

    def __init__(self, expected: str, actual: str, path: str = ""):
        super().__init__(
            f"Architecture fingerprint mismatch for {path or 'checkpoint'}: "
            f"expected {expected}, found {actual}"
        )
        self.expected = expected
        self.actual = actual


class DatasetLoadError(ValueError):
    """One or more samples failed to load; carries the load report."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class LatencyBudgetError(ValueError):
    """Mean prediction wall time exceeded the configured budget."""

    def __init__(self, mean_s: float, budget_s: float):
        super().__init__(f"mean prediction time {mean_s:.3f}s exceeds the budget of {budget_s:.3f}s")
        self.mean_s = mean_s
        self.budget_s = budget_s
