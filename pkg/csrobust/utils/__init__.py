"""
Utilities module containing helper functions.
"""

from csrobust.utils.logger import log_stage, setup_logger

__all__ = ["log_stage", "setup_logger"]
