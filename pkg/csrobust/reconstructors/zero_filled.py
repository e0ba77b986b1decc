"""
Zero-filled baseline: coil-wise inverse DFT of the masked data, combined by RSS.
"""

from __future__ import annotations

import numpy as np

from csrobust.core import ops
from csrobust.core.autodiff import DiffTensor
from csrobust.core.datagen import CoilSensitivities
from csrobust.core.fourier import SamplingMask, apply_mask, coil_images, rss
from csrobust.reconstructors.base import BaseReconstructor


def zero_filled(kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
    BaseReconstructor.check_inputs(kspace, mask, sens)
    return rss(coil_images(apply_mask(np.asarray(kspace), mask)))


def zero_filled_tensor(kspace: DiffTensor, mask: SamplingMask) -> DiffTensor:
    """Differentiable zero-filled image (N, N) from paired k-space (n_coils, 2, N, N)."""
    return ops.rss(ops.ifft2(ops.column_mask(kspace, mask.keep)))


class ZeroFilledReconstructor(BaseReconstructor):
    method_id = "zero_filled"
    differentiable = True

    def reconstruct(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
        return zero_filled(kspace, mask, sens)

    def reconstruct_tensor(self, kspace: DiffTensor, mask: SamplingMask, sens: CoilSensitivities) -> DiffTensor:
        return zero_filled_tensor(kspace, mask)
