"""
Multi-coil Cartesian acquisition model.

A x = M F (S_i x) per coil, with F the centered unitary 2D DFT and M a column mask.
Under unit sum-of-squares sensitivities and a full mask, A^H A is the identity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy import fft as sp_fft

from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import InvalidSpecError, ShapeMismatchError, UndefinedRatioError

logger = logging.getLogger(__name__)

PATTERNS = ("equispaced", "random")


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered unitary 2D DFT over the last two axes."""
    axes = (-2, -1)
    return sp_fft.fftshift(sp_fft.fft2(sp_fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Centered unitary inverse 2D DFT over the last two axes."""
    axes = (-2, -1)
    return sp_fft.fftshift(sp_fft.ifft2(sp_fft.ifftshift(k, axes=axes), norm="ortho"), axes=axes)


def center_band(width: int, center_fraction: float) -> slice:
    """Columns of the fully sampled centre band (always at least one column)."""
    n_center = max(1, int(math.floor(width * center_fraction)))
    n_center = min(n_center, width)
    start = width // 2 - n_center // 2
    return slice(start, start + n_center)


@dataclass(frozen=True)
class SamplingMask:
    """Column-selection pattern; ``keep[j]`` is True when k-space column j is acquired."""

    keep: np.ndarray
    acceleration: float = 1.0
    center_fraction: float = 0.08
    pattern: str = "equispaced"
    seed: Any = 0

    def __post_init__(self) -> None:
        keep = np.array(self.keep, dtype=bool)
        if keep.ndim != 1:
            raise InvalidSpecError(f"Mask must be one boolean per column, got shape {keep.shape}")
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @property
    def width(self) -> int:
        return int(self.keep.shape[0])

    @property
    def n_kept(self) -> int:
        return int(np.count_nonzero(self.keep))

    @classmethod
    def full(cls, width: int) -> "SamplingMask":
        return cls(keep=np.ones(width, dtype=bool), acceleration=1.0, center_fraction=1.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "acceleration": float(self.acceleration),
            "center_fraction": float(self.center_fraction),
            "pattern": self.pattern,
            "seed": self.seed,
        }


def make_mask(
    width: int,
    acceleration: float = 4.0,
    center_fraction: float = 0.08,
    pattern: str = "equispaced",
    seed: Any = 0,
) -> SamplingMask:
    """
    Keep floor(width * center_fraction) central columns plus equispaced or random
    extra columns so that round(width / acceleration) columns are kept in total.
    """
    width = int(width)
    if width < 1:
        raise InvalidSpecError(f"Mask width must be >= 1, got {width}")
    if acceleration < 1:
        raise InvalidSpecError(f"Acceleration must be >= 1, got {acceleration}")
    if not 0 < center_fraction <= 1 or center_fraction * width < 1:
        raise InvalidSpecError(
            f"center_fraction={center_fraction} leaves no centre column at width {width}"
        )
    if pattern not in PATTERNS:
        raise InvalidSpecError(f"Unknown mask pattern {pattern!r}; expected one of {PATTERNS}")

    if acceleration == 1:
        keep = np.ones(width, dtype=bool)
        return SamplingMask(keep, float(acceleration), float(center_fraction), pattern, seed)

    band = center_band(width, center_fraction)
    n_center = band.stop - band.start
    budget = int(round(width / acceleration))
    if n_center > budget:
        raise InvalidSpecError(
            f"Centre band of {n_center} columns exceeds the budget of {budget} columns "
            f"at acceleration {acceleration}"
        )

    keep = np.zeros(width, dtype=bool)
    keep[band] = True
    candidates = np.flatnonzero(~keep)
    extras = budget - n_center
    if extras > 0:
        if pattern == "equispaced":
            picks = np.round(np.linspace(0, len(candidates) - 1, extras)).astype(int)
            keep[candidates[picks]] = True
        else:
            rng = np.random.default_rng(seed)
            keep[rng.choice(candidates, size=extras, replace=False)] = True

    return SamplingMask(keep, float(acceleration), float(center_fraction), pattern, seed)


def mask_from_dict(width: int, payload: Dict[str, Any]) -> SamplingMask:
    return make_mask(
        width,
        acceleration=float(payload.get("acceleration", 4.0)),
        center_fraction=float(payload.get("center_fraction", 0.08)),
        pattern=str(payload.get("pattern", "equispaced")),
        seed=payload.get("seed", 0),
    )


def _check_image(x: np.ndarray, sens: CoilSensitivities, mask: SamplingMask) -> None:
    if tuple(x.shape) != sens.shape:
        raise ShapeMismatchError(f"Image shape {x.shape} does not match sensitivities {sens.shape}")
    if mask.width != x.shape[-1]:
        raise ShapeMismatchError(f"Mask width {mask.width} does not match image width {x.shape[-1]}")


def _check_kspace(y: np.ndarray, sens: CoilSensitivities, mask: SamplingMask) -> None:
    expected = (sens.n_coils,) + sens.shape
    if tuple(y.shape) != expected:
        raise ShapeMismatchError(f"k-space shape {y.shape} does not match expected {expected}")
    if mask.width != y.shape[-1]:
        raise ShapeMismatchError(f"Mask width {mask.width} does not match k-space width {y.shape[-1]}")


def apply_mask(y: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Zero the dropped columns (idempotent)."""
    if mask.width != y.shape[-1]:
        raise ShapeMismatchError(f"Mask width {mask.width} does not match k-space width {y.shape[-1]}")
    return y * mask.keep


def forward(x: np.ndarray, sens: CoilSensitivities, mask: SamplingMask) -> np.ndarray:
    """Multi-coil k-space (n_coils, H, W) of image ``x``."""
    x = np.asarray(x)
    _check_image(x, sens, mask)
    return fft2c(sens.maps * x[None]) * mask.keep


def adjoint(y: np.ndarray, sens: CoilSensitivities, mask: SamplingMask) -> np.ndarray:
    """A^H y = sum_i conj(S_i) F^-1 (M y_i)."""
    y = np.asarray(y)
    _check_kspace(y, sens, mask)
    return np.sum(np.conj(sens.maps) * ifft2c(y * mask.keep), axis=0)


def coil_images(y: np.ndarray) -> np.ndarray:
    """Coil-wise inverse DFT."""
    return ifft2c(np.asarray(y))


def rss(coil_images_: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Root-sum-of-squares coil combination."""
    if isinstance(coil_images_, (list, tuple)):
        if not coil_images_:
            raise ShapeMismatchError("rss needs at least one coil image")
        shapes = {np.shape(img) for img in coil_images_}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"Coil images differ in shape: {sorted(shapes)}")
        stack = np.stack(coil_images_)
    else:
        stack = np.asarray(coil_images_)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ShapeMismatchError(f"rss expects (n_coils, H, W), got {stack.shape}")
    return np.sqrt(np.sum(np.abs(stack) ** 2, axis=0))


def add_noise(y: np.ndarray, snr_db: Optional[float], seed: Any = 0) -> np.ndarray:
    """
    Add i.i.d. circular complex Gaussian noise so that ||y||^2 / E||n||^2 = 10^(snr_db/10).

    ``snr_db`` of None or +inf means noiseless and returns an unchanged copy.
    """
    y = np.asarray(y, dtype=np.complex128)
    if snr_db is None or (math.isinf(snr_db) and snr_db > 0):
        return y.copy()
    if not math.isfinite(snr_db):
        raise InvalidSpecError(f"snr_db must be finite or +inf, got {snr_db}")
    signal_power = float(np.sum(np.abs(y) ** 2))
    sigma2 = signal_power / (y.size * 10 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return y + math.sqrt(sigma2 / 2.0) * noise


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise_power = float(np.sum(np.abs(np.asarray(noisy) - np.asarray(clean)) ** 2))
    if noise_power == 0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(np.abs(clean) ** 2)) / noise_power)


def low_frequency_proportion(y: np.ndarray, center_fraction: float = 0.08) -> float:
    """Energy in the centre column band over the total k-space energy, all coils."""
    if not 0 < center_fraction <= 1:
        raise InvalidSpecError(f"center_fraction must be in (0, 1], got {center_fraction}")
    energy = np.abs(np.asarray(y)) ** 2
    total = float(np.sum(energy))
    if total == 0:
        raise UndefinedRatioError("Low-frequency proportion is undefined for zero-energy k-space")
    band = center_band(energy.shape[-1], center_fraction)
    if center_fraction == 1:
        return 1.0
    return float(np.sum(energy[..., band]) / total)


def column_energy_profile(y: np.ndarray) -> np.ndarray:
    """Fraction of k-space energy per column (sums to 1)."""
    energy = np.abs(np.asarray(y)) ** 2
    per_column = energy.reshape(-1, energy.shape[-1]).sum(axis=0)
    total = float(per_column.sum())
    if total == 0:
        raise UndefinedRatioError("Column energy profile is undefined for zero-energy k-space")
    return per_column / total


def operator_norm_sq(
    sens: CoilSensitivities,
    mask: SamplingMask,
    iterations: int = 20,
    seed: Any = 0,
) -> float:
    """Largest eigenvalue of A^H A by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(sens.shape) + 1j * rng.standard_normal(sens.shape)
    x /= np.linalg.norm(x)
    value = 0.0
    for _ in range(max(1, int(iterations))):
        x_next = adjoint(forward(x, sens, mask), sens, mask)
        value = float(np.linalg.norm(x_next))
        if value == 0:
            return 0.0
        x = x_next / value
    return value
