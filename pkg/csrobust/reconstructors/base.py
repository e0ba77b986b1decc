"""
Base Reconstructor Class

Every reconstruction method inherits from this class and maps measured k-space to a
nonnegative magnitude image of the target's shape.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

import numpy as np

from csrobust.core.autodiff import DiffTensor
from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import CapabilityError, ShapeMismatchError
from csrobust.core.fourier import SamplingMask


class BaseReconstructor(ABC):
    """
    Abstract base class for reconstruction methods.

    Subclasses implement :meth:`reconstruct`. Methods whose output is differentiable
    with respect to the measurement set ``differentiable = True`` and implement
    :meth:`reconstruct_tensor` with ops from :mod:`csrobust.core.ops`.
    """

    method_id = "base"
    differentiable = False

    def __init__(self, config: Optional[Dict[str, Any]] = None, logger: Optional[logging.Logger] = None):
        self.config = dict(config or {})
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self.name = self.__class__.__name__

    @abstractmethod
    def reconstruct(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
        """
        Reconstruct a magnitude image.

        Args:
            kspace: Measured multi-coil k-space, (n_coils, N, N) complex
            mask: Column sampling mask (unsampled entries of ``kspace`` are ignored)
            sens: Coil sensitivity maps used by the acquisition model

        Returns:
            Real nonnegative (N, N) image
        """

    def reconstruct_tensor(
        self,
        kspace: DiffTensor,
        mask: SamplingMask,
        sens: CoilSensitivities,
    ) -> DiffTensor:
        """Differentiable reconstruction from paired k-space (n_coils, 2, N, N)."""
        raise CapabilityError(
            f"{self.method_id} is not differentiable with respect to the measurement; "
            "attack it with joint_attack instead of pgd_attack"
        )

    @staticmethod
    def check_inputs(kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> None:
        expected = (sens.n_coils,) + tuple(sens.shape)
        if tuple(np.shape(kspace)) != expected:
            raise ShapeMismatchError(f"k-space shape {np.shape(kspace)} does not match {expected}")
        if mask.width != expected[-1]:
            raise ShapeMismatchError(f"Mask width {mask.width} does not match k-space width {expected[-1]}")

    def __repr__(self) -> str:
        return f"{self.name}(method_id={self.method_id!r})"
