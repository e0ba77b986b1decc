"""
Core module: acquisition model, transforms, autodiff, metrics, experiments and configuration.
"""

from csrobust.core.config import ConfigManager
from csrobust.core.errors import (
    AggregateError,
    CapabilityError,
    ConfigError,
    CsRobustError,
    InvalidSpecError,
    MissingInputError,
    NumericalFailureError,
    ShapeMismatchError,
    VolumeParseError,
)

__all__ = [
    "ConfigManager",
    "AggregateError",
    "CapabilityError",
    "ConfigError",
    "CsRobustError",
    "InvalidSpecError",
    "MissingInputError",
    "NumericalFailureError",
    "ShapeMismatchError",
    "VolumeParseError",
]
