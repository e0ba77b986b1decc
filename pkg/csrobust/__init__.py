"""
csrobust - robustness experiments for compressive-sensing MRI reconstruction

Simulated multi-coil acquisitions, four reconstruction methods behind one interface,
adversarial attacks, distribution-shift and small-feature experiments.
"""

from csrobust.core.config import ConfigManager
from csrobust.core.errors import CsRobustError
from csrobust.reconstructors import BaseReconstructor, build_reconstructor

__version__ = "0.1.0"

__all__ = [
    "ConfigManager",
    "CsRobustError",
    "BaseReconstructor",
    "build_reconstructor",
]
