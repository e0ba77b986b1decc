"""
Reconstruction methods behind one interface.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional

from csrobust.core.errors import InvalidSpecError
from csrobust.reconstructors.base import BaseReconstructor
from csrobust.reconstructors.cnn import CnnReconstructor, TrainedCnn
from csrobust.reconstructors.decoder import DecoderReconstructor
from csrobust.reconstructors.sparse import L1Reconstructor
from csrobust.reconstructors.zero_filled import ZeroFilledReconstructor

RECONSTRUCTORS = {
    ZeroFilledReconstructor.method_id: ZeroFilledReconstructor,
    L1Reconstructor.method_id: L1Reconstructor,
    DecoderReconstructor.method_id: DecoderReconstructor,
    CnnReconstructor.method_id: CnnReconstructor,
}


def build_reconstructor(
    method: str,
    params: Optional[Dict[str, Any]] = None,
    model: Optional[TrainedCnn] = None,
    logger: Optional[logging.Logger] = None,
) -> BaseReconstructor:
    """Instantiate ``method`` from its config section; ``model`` is only used by cnn."""
    if method not in RECONSTRUCTORS:
        raise InvalidSpecError(f"Unknown method {method!r}; expected one of {sorted(RECONSTRUCTORS)}")
    if method == CnnReconstructor.method_id:
        return CnnReconstructor(params, logger, model=model)
    return RECONSTRUCTORS[method](params, logger)


__all__ = [
    "BaseReconstructor",
    "CnnReconstructor",
    "DecoderReconstructor",
    "L1Reconstructor",
    "ZeroFilledReconstructor",
    "RECONSTRUCTORS",
    "build_reconstructor",
]
