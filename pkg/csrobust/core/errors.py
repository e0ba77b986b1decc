"""
Error types shared across the simulation, reconstruction and harness modules.

Every error carries a machine-readable ``code`` and the CLI exit status it maps to.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence


class CsRobustError(Exception):
    """Base class for all library errors."""

    code = "CSROBUST_ERROR"
    exit_code = 1

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        if code:
            self.code = code

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": str(self), "exit_code": self.exit_code}


class ConfigError(CsRobustError, ValueError):
    """Experiment config failed schema validation."""

    code = "CONFIG_INVALID"
    exit_code = 2


class InvalidSpecError(CsRobustError, ValueError):
    """A phantom, mask, transform or probe spec is not valid."""

    code = "INVALID_SPEC"
    exit_code = 2


class ShapeMismatchError(CsRobustError, ValueError):
    code = "SHAPE_MISMATCH"
    exit_code = 2


class MissingInputError(CsRobustError, FileNotFoundError):
    code = "MISSING_INPUT"
    exit_code = 3


class VolumeParseError(CsRobustError, ValueError):
    """A KSV/CNW file could not be parsed; ``offset`` is the failing byte position."""

    code = "PARSE_ERROR"
    exit_code = 3

    def __init__(self, message: str, offset: int, code: Optional[str] = None):
        super().__init__(f"{message} (at byte offset {offset})", code)
        self.offset = int(offset)


class NumericalFailureError(CsRobustError, ArithmeticError):
    code = "NUMERICAL_FAILURE"
    exit_code = 4


class UndefinedRatioError(NumericalFailureError):
    code = "UNDEFINED_RATIO"


class DegenerateFitError(NumericalFailureError):
    code = "DEGENERATE_FIT"


class CapabilityError(CsRobustError, TypeError):
    code = "NOT_DIFFERENTIABLE"
    exit_code = 2


class AggregateError(CsRobustError):
    """Every member of a batch failed; ``failures`` keeps (label, error) pairs."""

    code = "ALL_FAILED"
    exit_code = 4

    def __init__(self, message: str, failures: Sequence[Any]):
        self.failures: List[Any] = list(failures)
        details = "; ".join(f"{label}: {err}" for label, err in self.failures)
        super().__init__(f"{message}: {details}" if details else message)
