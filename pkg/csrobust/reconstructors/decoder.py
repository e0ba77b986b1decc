"""
Un-trained decoder reconstruction.

A randomly initialized generator G(C) maps a fixed random seed tensor to 2 * n_coils
channels (real and imaginary part per coil). The parameters C are fit to a single
measurement by minimizing 1/2 sum_i ||y_i - M F G_i(C)||^2; the image is the RSS of the
best-loss iterate's coil outputs.

Each hidden layer is conv -> 2x upsample -> ReLU -> channel affine, followed by a final
1x1 convolution. ``conv_decoder`` uses k x k hidden convolutions, ``deep_decoder`` 1x1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from csrobust.core import ops
from csrobust.core.autodiff import DiffTensor, Tape, from_pair, to_pair
from csrobust.core.datagen import CoilSensitivities
from csrobust.core.errors import InvalidSpecError, NumericalFailureError
from csrobust.core.fourier import SamplingMask, apply_mask, rss
from csrobust.reconstructors.base import BaseReconstructor
from csrobust.reconstructors.optim import check_finite, make_optimizer

logger = logging.getLogger(__name__)

ARCHITECTURES = ("conv_decoder", "deep_decoder")


@dataclass(frozen=True)
class DecoderConfig:
    architecture: str = "conv_decoder"
    layers: int = 5
    channels: int = 64
    kernel_size: int = 3
    upsample: str = "nearest"
    optimizer: str = "adam"
    lr: float = 0.01
    lr_end: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 1000
    seed: Any = 0

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DecoderConfig":
        known = {key: payload[key] for key in cls.__dataclass_fields__ if key in payload}
        return replace(cls(), **known)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def hidden_kernel(self) -> int:
        return 1 if self.architecture == "deep_decoder" else int(self.kernel_size)

    def validate(self, size: Optional[int] = None) -> None:
        if self.architecture not in ARCHITECTURES:
            raise InvalidSpecError(f"Unknown decoder architecture {self.architecture!r}")
        if self.layers < 2:
            raise InvalidSpecError(f"Decoder needs layers >= 2, got {self.layers}")
        if self.channels < 1:
            raise InvalidSpecError(f"Decoder channels must be >= 1, got {self.channels}")
        if self.hidden_kernel < 1 or self.hidden_kernel % 2 == 0:
            raise InvalidSpecError(f"Decoder kernel size must be odd, got {self.hidden_kernel}")
        if self.upsample not in ("nearest", "bilinear"):
            raise InvalidSpecError(f"Unknown upsample mode {self.upsample!r}")
        if self.iterations < 0:
            raise InvalidSpecError(f"iterations must be >= 0, got {self.iterations}")
        if size is not None and size % (2 ** (self.layers - 1)) != 0:
            raise InvalidSpecError(
                f"Image size {size} is not reachable with {self.layers - 1} 2x upsamplings"
            )


class DecoderNetwork:
    """Parameters and seed input of one decoder instance."""

    def __init__(self, cfg: DecoderConfig, size: int, n_coils: int, seed: Any = None):
        cfg.validate(size)
        self.cfg = cfg
        self.size = int(size)
        self.n_coils = int(n_coils)
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        base = self.size // 2 ** (cfg.layers - 1)
        self.seed_input = rng.uniform(0.0, 1.0, size=(cfg.channels, base, base))
        self.params: Dict[str, np.ndarray] = {}
        k = cfg.hidden_kernel
        for layer in range(cfg.layers - 1):
            fan_in = cfg.channels * k * k
            self.params[f"conv{layer}"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(cfg.channels, cfg.channels, k, k))
            self.params[f"gain{layer}"] = np.ones(cfg.channels)
            self.params[f"bias{layer}"] = np.zeros(cfg.channels)
        self.params["out"] = rng.normal(
            0.0, math.sqrt(1.0 / cfg.channels), size=(2 * self.n_coils, cfg.channels, 1, 1)
        )

    def leaves(self, tape: Tape) -> Dict[str, DiffTensor]:
        return {name: tape.leaf(value, name=name) for name, value in self.params.items()}

    def forward(self, tape: Tape, leaves: Dict[str, DiffTensor]) -> DiffTensor:
        """Coil images in paired layout (n_coils, 2, N, N)."""
        x = tape.constant(self.seed_input, name="seed")
        for layer in range(self.cfg.layers - 1):
            x = ops.conv2d(x, leaves[f"conv{layer}"])
            x = ops.upsample2x(x, self.cfg.upsample)
            x = ops.relu(x)
            x = ops.channel_affine(x, leaves[f"gain{layer}"], leaves[f"bias{layer}"])
        x = ops.conv2d(x, leaves["out"])
        return ops.reshape(x, (self.n_coils, 2, self.size, self.size))


def measurement_loss(coils: DiffTensor, y_pair: np.ndarray, mask: SamplingMask) -> DiffTensor:
    """1/2 sum_i ||y_i - M F G_i||^2 with ``y_pair`` already masked."""
    predicted = ops.column_mask(ops.fft2(coils), mask.keep)
    return ops.scale(ops.sum_squares(ops.sub(predicted, y_pair)), 0.5)


@dataclass
class DecoderFitResult:
    image: np.ndarray
    losses: List[float]
    best_iteration: int
    coil_images: np.ndarray


def decoder_fit(
    kspace: np.ndarray,
    mask: SamplingMask,
    sens: CoilSensitivities,
    cfg: DecoderConfig,
    seed: Any = None,
    log: Optional[logging.Logger] = None,
) -> DecoderFitResult:
    """
    Fit the decoder to one measurement. ``losses[i]`` is the loss after i optimizer
    steps, so ``iterations=0`` returns the random-init output and its loss.
    """
    log = log or logger
    BaseReconstructor.check_inputs(kspace, mask, sens)
    network = DecoderNetwork(cfg, sens.shape[-1], sens.n_coils, seed)
    y_pair = to_pair(apply_mask(np.asarray(kspace), mask))
    optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.beta1, cfg.beta2, cfg.lr_end, cfg.iterations)

    losses: List[float] = []
    best: Tuple[float, int, Optional[np.ndarray]] = (math.inf, 0, None)
    for iteration in range(cfg.iterations + 1):
        tape = Tape()
        leaves = network.leaves(tape)
        coils = network.forward(tape, leaves)
        loss = measurement_loss(coils, y_pair, mask)
        value = check_finite(loss.item(), f"Decoder loss at iteration {iteration}")
        losses.append(value)
        if value < best[0]:
            best = (value, iteration, coils.value.copy())
        if iteration == cfg.iterations:
            break
        grads = tape.backward(loss)
        optimizer.step(network.params, {name: grads[leaf] for name, leaf in leaves.items()})

    best_loss, best_iteration, best_coils = best
    if best_coils is None:
        raise NumericalFailureError("Decoder fit produced no finite iterate")
    log.debug(
        "Decoder fit: loss %.6g -> %.6g, best %.6g at iteration %d",
        losses[0],
        losses[-1],
        best_loss,
        best_iteration,
    )
    coil_images = from_pair(best_coils)
    return DecoderFitResult(rss(coil_images), losses, best_iteration, coil_images)


class DecoderReconstructor(BaseReconstructor):
    method_id = "decoder"
    differentiable = False

    def __init__(self, config: Optional[Dict[str, Any]] = None, logger: Optional[logging.Logger] = None):
        super().__init__(config, logger)
        self.decoder_config = DecoderConfig.from_dict(self.config)
        self.decoder_config.validate()

    def fit(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> DecoderFitResult:
        return decoder_fit(kspace, mask, sens, self.decoder_config, log=self.logger)

    def reconstruct(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
        return self.fit(kspace, mask, sens).image
