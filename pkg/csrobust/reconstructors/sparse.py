"""
Sparsity-regularized reconstruction.

Minimizes sum_i ||y_i - M F S_i x||^2 + lam * ||H x||_1 with FISTA over the synthesis
coefficients c = H x. H is orthonormal, so the data-term Lipschitz constant is
2 * lambda_max(A^H A), estimated by power iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import InvalidSpecError, NumericalFailureError
from csrobust.core.fourier import SamplingMask, adjoint, apply_mask, forward, operator_norm_sq
from csrobust.core.transforms import TransformSpec, analyze, l1_norm, soft_threshold, synthesize
from csrobust.reconstructors.base import BaseReconstructor

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class SparseReconConfig:
    lam: float = 1e-4
    transform: TransformSpec = field(default_factory=TransformSpec)
    max_iters: int = 200
    tolerance: float = 1e-7
    power_iterations: int = 20
    step_factor: float = 0.9

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SparseReconConfig":
        transform = payload.get("transform", {})
        if isinstance(transform, str):
            transform = {"kind": transform}
        return cls(
            lam=float(payload.get("lam", 1e-4)),
            transform=TransformSpec.from_dict(transform),
            max_iters=int(payload.get("max_iters", 200)),
            tolerance=float(payload.get("tolerance", 1e-7)),
            power_iterations=int(payload.get("power_iterations", 20)),
            step_factor=float(payload.get("step_factor", 0.9)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lam": self.lam,
            "transform": self.transform.to_dict(),
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
        }

    def validate(self) -> None:
        if self.lam < 0:
            raise InvalidSpecError(f"lam must be >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise InvalidSpecError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0 < self.step_factor <= 1:
            raise InvalidSpecError(f"step_factor must be in (0, 1], got {self.step_factor}")


@dataclass
class SparseResult:
    image: np.ndarray
    objectives: List[float]
    iterations: int
    step: float


def l1_objective(
    x: np.ndarray,
    kspace: np.ndarray,
    mask: SamplingMask,
    sens: CoilSensitivities,
    lam: float,
    transform: TransformSpec,
) -> float:
    """sum_i ||y_i - A S_i x||^2 + lam ||H x||_1 on the sampled entries."""
    residual = forward(x, sens, mask) - apply_mask(kspace, mask)
    spec = transform.for_size(x.shape[-1])
    return float(np.sum(np.abs(residual) ** 2)) + lam * l1_norm(analyze(x, spec))


def fista(
    kspace: np.ndarray,
    mask: SamplingMask,
    sens: CoilSensitivities,
    cfg: SparseReconConfig,
    log: Optional[logging.Logger] = None,
) -> SparseResult:
    """
    FISTA from c0 = H A^H y. Returns the best iterate by objective, with the zero
    image as an extra candidate, so the result never scores worse than either start.
    """
    log = log or logger
    cfg.validate()
    BaseReconstructor.check_inputs(kspace, mask, sens)
    size = sens.shape[-1]
    spec = cfg.transform.for_size(size)
    y = apply_mask(np.asarray(kspace, dtype=np.complex128), mask)

    lipschitz = 2.0 * operator_norm_sq(sens, mask, iterations=cfg.power_iterations)
    if lipschitz <= 0:
        return SparseResult(np.zeros(sens.shape), [0.0], 0, 0.0)
    step = cfg.step_factor / lipschitz
    threshold = step * cfg.lam

    def objective(c: np.ndarray, ac: np.ndarray) -> float:
        return float(np.sum(np.abs(ac - y) ** 2)) + cfg.lam * l1_norm(c)

    x0 = adjoint(y, sens, mask)
    c = analyze(x0, spec)
    ac = forward(x0, sens, mask)
    initial = objective(c, ac)
    objectives = [initial]

    best_value, best_c = initial, c
    zero_value = float(np.sum(np.abs(y) ** 2))
    if zero_value < best_value:
        best_value, best_c = zero_value, np.zeros_like(c)
    # Floor keeps round-off around an exact start from reading as divergence.
    limit = DIVERGENCE_FACTOR * max(initial, 1e-12 * zero_value, np.finfo(float).tiny)

    c_prev, ac_prev, t = c, ac, 1.0
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum = (t - 1.0) / t_next
        v = c + momentum * (c - c_prev)
        av = ac + momentum * (ac - ac_prev)

        gradient = 2.0 * analyze(adjoint(av - y, sens, mask), spec)
        c_next = soft_threshold(v - step * gradient, threshold)
        ac_next = forward(synthesize(c_next, spec), sens, mask)
        value = objective(c_next, ac_next)

        if not math.isfinite(value) or value > limit:
            raise NumericalFailureError(
                f"FISTA diverged at iteration {iterations} with step size {step:.4g} "
                f"(objective {value:.4g} > {DIVERGENCE_FACTOR:g}x initial {initial:.4g})"
            )
        if value < best_value:
            best_value, best_c = value, c_next

        previous = objectives[-1]
        objectives.append(value)
        c_prev, ac_prev, c, ac, t = c, ac, c_next, ac_next, t_next
        if abs(previous - value) <= cfg.tolerance * max(previous, np.finfo(float).tiny):
            break

    log.debug(
        "FISTA stopped after %d iterations: objective %.6g -> %.6g (best %.6g), step %.4g",
        iterations,
        initial,
        objectives[-1],
        best_value,
        step,
    )
    return SparseResult(synthesize(best_c, spec), objectives, iterations, step)


def l1_reconstruct(
    kspace: np.ndarray,
    mask: SamplingMask,
    sens: CoilSensitivities,
    cfg: SparseReconConfig,
) -> np.ndarray:
    return np.abs(fista(kspace, mask, sens, cfg).image)


class L1Reconstructor(BaseReconstructor):
    """Sparsity-based reconstruction; the basis is any of the orthonormal transforms."""

    method_id = "l1"
    differentiable = False

    def __init__(self, config: Optional[Dict[str, Any]] = None, logger: Optional[logging.Logger] = None):
        super().__init__(config, logger)
        self.recon_config = SparseReconConfig.from_dict(self.config)
        self.recon_config.validate()

    def reconstruct(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
        return np.abs(fista(kspace, mask, sens, self.recon_config, self.logger).image)
