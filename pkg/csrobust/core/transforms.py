"""
Orthonormal sparsifying transforms: multi-level 2D wavelets, 2D DCT-II and 2D Fourier.

Real transforms act on the real and imaginary parts independently, so every
transform maps a complex N x N image to a complex coefficient array of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, List, Tuple

import numpy as np
import pywt
from scipy import fft as sp_fft

from csrobust.core.errors import InvalidSpecError, ShapeMismatchError

WAVELETS = {"wavelet-haar": "haar", "wavelet-db4": "db4"}
KINDS = ("wavelet-haar", "wavelet-db4", "dct", "fourier")


@dataclass(frozen=True)
class TransformSpec:
    """Sparsifying basis selector; ``levels`` only applies to wavelets."""

    kind: str = "wavelet-haar"
    levels: int = 4

    @property
    def is_wavelet(self) -> bool:
        return self.kind in WAVELETS

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TransformSpec":
        return cls(kind=str(payload.get("kind", "wavelet-haar")), levels=int(payload.get("levels", 4)))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "levels": int(self.levels)}

    def for_size(self, size: int) -> "TransformSpec":
        """Same basis with wavelet levels capped to what ``size`` supports."""
        if not self.is_wavelet:
            return self
        return TransformSpec(self.kind, max(1, min(int(self.levels), self.max_levels(int(size)))))

    def max_levels(self, size: int) -> int:
        if self.kind == "wavelet-haar":
            return int(np.log2(size))
        wavelet = pywt.Wavelet(WAVELETS[self.kind])
        return int(pywt.dwt_max_level(size, wavelet.dec_len))

    def validate(self, shape: Tuple[int, ...]) -> None:
        if self.kind not in KINDS:
            raise InvalidSpecError(f"Unknown transform kind {self.kind!r}; expected one of {KINDS}")
        if len(shape) != 2:
            raise ShapeMismatchError(f"Transforms expect a 2D image, got shape {shape}")
        if not self.is_wavelet:
            return
        if self.levels < 1:
            raise InvalidSpecError(f"Wavelet levels must be >= 1, got {self.levels}")
        for size in shape:
            if size % (2 ** self.levels) != 0:
                raise InvalidSpecError(
                    f"Image size {size} is not divisible by 2^{self.levels} for {self.kind}"
                )
            if self.levels > self.max_levels(size):
                raise InvalidSpecError(
                    f"{self.kind} supports at most {self.max_levels(size)} levels at size {size}, "
                    f"got {self.levels}"
                )


@lru_cache(maxsize=32)
def _coefficient_slices(shape: Tuple[int, int], wavelet: str, levels: int) -> List[Any]:
    coeffs = pywt.wavedec2(np.zeros(shape), wavelet, mode="periodization", level=levels)
    _, slices = pywt.coeffs_to_array(coeffs)
    return slices


def _wavelet_forward(x: np.ndarray, wavelet: str, levels: int) -> np.ndarray:
    coeffs = pywt.wavedec2(x, wavelet, mode="periodization", level=levels)
    arr, _ = pywt.coeffs_to_array(coeffs)
    return arr


def _wavelet_inverse(c: np.ndarray, wavelet: str, levels: int) -> np.ndarray:
    slices = _coefficient_slices(c.shape, wavelet, levels)
    coeffs = pywt.array_to_coeffs(c, slices, output_format="wavedec2")
    return pywt.waverec2(coeffs, wavelet, mode="periodization")


def _apply_real(func, x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        return func(np.ascontiguousarray(x.real)) + 1j * func(np.ascontiguousarray(x.imag))
    return func(np.asarray(x, dtype=np.float64)).astype(np.complex128)


def analyze(x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Coefficients H x; norm preserving for every kind."""
    x = np.asarray(x)
    spec.validate(x.shape)
    if spec.is_wavelet:
        wavelet = WAVELETS[spec.kind]
        return _apply_real(lambda part: _wavelet_forward(part, wavelet, spec.levels), x)
    if spec.kind == "dct":
        return _apply_real(lambda part: sp_fft.dctn(part, type=2, norm="ortho"), x)
    return sp_fft.fft2(x.astype(np.complex128), norm="ortho")


def synthesize(c: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Image H^H c; exact inverse of :func:`analyze`."""
    c = np.asarray(c)
    spec.validate(c.shape)
    if spec.is_wavelet:
        wavelet = WAVELETS[spec.kind]
        return _apply_real(lambda part: _wavelet_inverse(part, wavelet, spec.levels), c)
    if spec.kind == "dct":
        return _apply_real(lambda part: sp_fft.idctn(part, type=2, norm="ortho"), c)
    return sp_fft.ifft2(c.astype(np.complex128), norm="ortho")


def soft_threshold(c: np.ndarray, tau: float) -> np.ndarray:
    """
    Complex soft-thresholding, the prox of tau * ||.||_1.

    Shrinks magnitudes by ``tau`` and keeps the phase; entries with |c| <= tau become 0.
    """
    if tau < 0:
        raise InvalidSpecError(f"Threshold must be >= 0, got {tau}")
    c = np.asarray(c)
    magnitude = np.abs(c)
    safe = np.where(magnitude > 0, magnitude, 1.0)
    scale = np.maximum(magnitude - tau, 0.0) / safe
    return c * scale


def l1_norm(c: np.ndarray) -> float:
    return float(np.sum(np.abs(c)))
