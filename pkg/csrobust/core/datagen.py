"""
Synthetic phantoms and coil sensitivity maps.

Phantom families stand in for the clinical image distributions: ``smooth`` is low-pass
only, ``ellipses`` is piecewise constant, ``textured`` adds band-limited sinusoidal
texture on top of the ellipses, ``shepp_logan`` is the fixed modified Shepp-Logan head.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Union

import numpy as np

from csrobust.core.errors import InvalidSpecError
from csrobust.core.transforms import KINDS, TransformSpec, analyze, synthesize

logger = logging.getLogger(__name__)

FAMILIES = ("ellipses", "textured", "smooth", "shepp_logan")
Seed = Union[int, Sequence[int]]

# Modified Shepp-Logan: intensity, semi-axes a/b, centre x0/y0, rotation (degrees).
MODIFIED_SHEPP_LOGAN = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic ground-truth image."""

    family: str
    size: int = 64
    seed: Any = 0
    sparsity_basis: Optional[str] = None
    sparsity_fraction: Optional[float] = None

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidSpecError(f"Unknown phantom family {self.family!r}; expected one of {FAMILIES}")
        size = int(self.size)
        if size < 2 or size & (size - 1) != 0:
            raise InvalidSpecError(f"Phantom size must be a power of two, got {self.size}")
        if self.sparsity_basis is not None:
            if self.sparsity_basis not in KINDS and f"wavelet-{self.sparsity_basis}" not in KINDS:
                raise InvalidSpecError(f"Unknown sparsity basis {self.sparsity_basis!r}")
            if self.sparsity_fraction is None:
                raise InvalidSpecError("sparsity_fraction is required with sparsity_basis")
        if self.sparsity_fraction is not None and not 0 < float(self.sparsity_fraction) <= 1:
            raise InvalidSpecError(
                f"sparsity_fraction must be in (0, 1], got {self.sparsity_fraction}"
            )

    def basis(self, levels: int = 4) -> TransformSpec:
        """Transform used to sparsify; bare wavelet names (``haar``) are accepted."""
        kind = str(self.sparsity_basis)
        if kind not in KINDS:
            kind = f"wavelet-{kind}"
        return TransformSpec(kind=kind, levels=levels).for_size(int(self.size))


def _grid(size: int) -> tuple:
    # Pixel centres on [-1, 1).
    coords = (np.arange(size) - size / 2 + 0.5) / (size / 2)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return yy, xx


def _ellipse_mask(yy, xx, a, b, x0, y0, phi_deg) -> np.ndarray:
    phi = math.radians(phi_deg)
    cos_p, sin_p = math.cos(phi), math.sin(phi)
    x = xx - x0
    y = yy - y0
    return ((x * cos_p + y * sin_p) ** 2) / a ** 2 + ((y * cos_p - x * sin_p) ** 2) / b ** 2 <= 1.0


def _shepp_logan(size: int) -> np.ndarray:
    yy, xx = _grid(size)
    image = np.zeros((size, size))
    for intensity, a, b, x0, y0, phi in MODIFIED_SHEPP_LOGAN:
        # Flip y so the head is upright with row 0 at the top.
        image[_ellipse_mask(-yy, xx, a, b, x0, y0, phi)] += intensity
    return image


def _random_ellipses(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    image = np.zeros((size, size))
    # Outer body ellipse, then interior structures.
    a, b = rng.uniform(0.6, 0.85), rng.uniform(0.6, 0.85)
    body = _ellipse_mask(yy, xx, a, b, 0.0, 0.0, rng.uniform(0.0, 180.0))
    image[body] = rng.uniform(0.4, 0.6)
    for _ in range(int(rng.integers(4, 9))):
        ea, eb = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
        x0, y0 = rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)
        inner = _ellipse_mask(yy, xx, ea, eb, x0, y0, rng.uniform(0.0, 180.0)) & body
        image[inner] = rng.uniform(0.1, 1.0)
    return image


def _texture(size: int, rng: np.random.Generator) -> np.ndarray:
    # Band-limited: frequencies between 0.15 and 0.4 cycles per pixel.
    rows = np.arange(size)[:, None]
    cols = np.arange(size)[None, :]
    texture = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 6))):
        freq = rng.uniform(0.15, 0.4)
        angle = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2 * math.pi)
        texture += np.cos(2 * math.pi * freq * (rows * math.sin(angle) + cols * math.cos(angle)) + phase)
    return texture / np.max(np.abs(texture))


def _smooth(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    image = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        sy, sx = rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6)
        y0, x0 = rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)
        image += rng.uniform(0.3, 1.0) * np.exp(-((yy - y0) ** 2) / (2 * sy ** 2) - ((xx - x0) ** 2) / (2 * sx ** 2))
    return image


def _sparsify(image: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    basis = spec.basis()
    coeffs = analyze(image, basis)
    keep = int(math.ceil(float(spec.sparsity_fraction) * coeffs.size))
    flat = coeffs.ravel()
    order = np.argsort(-np.abs(flat), kind="stable")
    sparse = np.zeros_like(flat)
    sparse[order[:keep]] = flat[order[:keep]]
    return synthesize(sparse.reshape(coeffs.shape), basis)


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Complex N x N ground truth, a pure function of ``spec`` (max magnitude 1)."""
    spec.validate()
    size = int(spec.size)
    rng = np.random.default_rng(spec.seed)

    if spec.family == "shepp_logan":
        image = _shepp_logan(size)
    elif spec.family == "smooth":
        image = _smooth(size, rng)
    else:
        image = _random_ellipses(size, rng)
        if spec.family == "textured":
            support = image > 0
            image = image + 0.35 * _texture(size, rng) * support
            image = np.clip(image, 0.0, None)

    peak = float(np.max(np.abs(image)))
    if peak > 0:
        image = image / peak
    result = image.astype(np.complex128)

    if spec.sparsity_basis is not None:
        result = _sparsify(result, spec)
    return result


@dataclass(frozen=True)
class CoilSensitivities:
    """Per-coil complex sensitivity maps, shape (n_coils, N, N), unit sum of squares."""

    maps: np.ndarray

    def __post_init__(self) -> None:
        maps = np.array(self.maps, dtype=np.complex128)
        if maps.ndim != 3:
            raise InvalidSpecError(f"Sensitivity maps must be (n_coils, H, W), got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise InvalidSpecError("Sensitivity maps contain non-finite values")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @property
    def n_coils(self) -> int:
        return int(self.maps.shape[0])

    @property
    def shape(self) -> tuple:
        return tuple(self.maps.shape[1:])

    def sum_of_squares(self) -> np.ndarray:
        return np.sum(np.abs(self.maps) ** 2, axis=0)


def generate_sensitivities(n_coils: int, size: int, seed: Seed = 0) -> CoilSensitivities:
    """
    Smooth Gaussian-bump coil profiles at equispaced angles around the image.

    The profiles are normalized pixel-wise so that sum_i |S_i|^2 == 1.
    """
    if int(n_coils) < 1:
        raise InvalidSpecError(f"n_coils must be >= 1, got {n_coils}")
    if int(size) < 1:
        raise InvalidSpecError(f"size must be >= 1, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(int(size))
    offset = rng.uniform(0.0, 2 * math.pi)

    maps = []
    for index in range(int(n_coils)):
        angle = offset + 2 * math.pi * index / n_coils
        cy, cx = 1.2 * math.sin(angle), 1.2 * math.cos(angle)
        width = rng.uniform(0.7, 1.1)
        magnitude = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        # Smooth linear phase per coil.
        ky, kx = rng.uniform(-1.0, 1.0, size=2)
        phase = np.pi * (ky * yy + kx * xx) + rng.uniform(0.0, 2 * math.pi)
        maps.append(magnitude * np.exp(1j * phase))

    stacked = np.stack(maps)
    norm = np.sqrt(np.sum(np.abs(stacked) ** 2, axis=0))
    return CoilSensitivities(maps=stacked / norm)
