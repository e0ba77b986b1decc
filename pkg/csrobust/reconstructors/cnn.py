"""
Trained CNN reconstruction.

A small encoder-decoder maps the zero-filled magnitude image to the ground-truth
magnitude: one 3x3 conv + ReLU per level, 2x average pooling on the way down,
nearest upsampling and skip concatenation on the way up, a 1x1 output conv added to
the input and rectified. The zero-filled preprocessing and the network are built from
ops, so the whole pipeline is differentiable with respect to the measurement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from csrobust.core import ops
from csrobust.core.autodiff import DiffTensor, Tape
from csrobust.core.datagen import CoilSensitivities
from csrobust.core.dataset import DatasetManifest
from csrobust.core.errors import InvalidSpecError, MissingInputError, ShapeMismatchError
from csrobust.core.fourier import SamplingMask, mask_from_dict
from csrobust.core.volume_io import read_weights, write_weights
from csrobust.reconstructors.base import BaseReconstructor
from csrobust.reconstructors.optim import Adam, check_finite
from csrobust.reconstructors.zero_filled import zero_filled, zero_filled_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainedCnnConfig:
    depth: int = 3
    width: int = 8
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 4
    seed: Any = 0

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TrainedCnnConfig":
        known = {key: payload[key] for key in cls.__dataclass_fields__ if key in payload}
        return replace(cls(), **known)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self, size: Optional[int] = None) -> None:
        if self.depth < 1:
            raise InvalidSpecError(f"CNN depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise InvalidSpecError(f"CNN width must be >= 1, got {self.width}")
        if self.epochs < 0:
            raise InvalidSpecError(f"CNN epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidSpecError(f"CNN batch_size must be >= 1, got {self.batch_size}")
        if size is not None and size % (2 ** (self.depth - 1)) != 0:
            raise InvalidSpecError(f"Image size {size} is not divisible by 2^{self.depth - 1}")


def _level_channels(cfg: TrainedCnnConfig) -> List[int]:
    return [cfg.width * 2 ** level for level in range(cfg.depth)]


def init_params(cfg: TrainedCnnConfig, seed: Any = None) -> Dict[str, np.ndarray]:
    """He-initialized weights, in a fixed insertion order."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    channels = _level_channels(cfg)
    params: Dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int, k: int) -> None:
        params[f"{name}.w"] = rng.normal(0.0, math.sqrt(2.0 / (c_in * k * k)), size=(c_out, c_in, k, k))
        params[f"{name}.b"] = np.zeros(c_out)

    previous = 1
    for level, width in enumerate(channels):
        conv(f"enc{level}", width, previous, 3)
        previous = width
    for level in range(cfg.depth - 1, 0, -1):
        conv(f"dec{level}", channels[level - 1], channels[level] + channels[level - 1], 3)
    params["head.w"] = rng.normal(0.0, 1e-2, size=(1, channels[0], 1, 1))
    params["head.b"] = np.zeros(1)
    return params


def network_forward(cfg: TrainedCnnConfig, leaves: Dict[str, DiffTensor], image: DiffTensor) -> DiffTensor:
    """(N, N) magnitude in, (N, N) nonnegative magnitude out."""
    size = image.shape[-1]
    x_in = ops.reshape(image, (1, size, size))
    skips: List[DiffTensor] = []
    x = x_in
    for level in range(cfg.depth):
        if level > 0:
            x = ops.avg_pool2x(x)
        x = ops.relu(ops.conv2d(x, leaves[f"enc{level}.w"], leaves[f"enc{level}.b"]))
        skips.append(x)
    for level in range(cfg.depth - 1, 0, -1):
        x = ops.upsample2x(x, "nearest")
        x = ops.concat([x, skips[level - 1]], axis=0)
        x = ops.relu(ops.conv2d(x, leaves[f"dec{level}.w"], leaves[f"dec{level}.b"]))
    residual = ops.conv2d(x, leaves["head.w"], leaves["head.b"])
    out = ops.relu(ops.add(x_in, residual))
    return ops.reshape(out, (size, size))


@dataclass(frozen=True)
class TrainedCnn:
    """Immutable after training; safe to share between concurrent reconstructions."""

    cfg: TrainedCnnConfig
    params: Dict[str, np.ndarray]
    size: int
    mask: Dict[str, Any]
    train_losses: List[float]

    def __post_init__(self) -> None:
        for value in self.params.values():
            value.setflags(write=False)

    def predict(self, image: np.ndarray) -> np.ndarray:
        tape = Tape()
        leaves = {name: tape.constant(value, name=name) for name, value in self.params.items()}
        return network_forward(self.cfg, leaves, tape.constant(image)).value

    def save(self, path: Union[str, Path]) -> Path:
        meta = {"config": self.cfg.to_dict(), "size": self.size, "mask": self.mask,
                "train_losses": list(self.train_losses)}
        return write_weights(path, self.params, meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainedCnn":
        params, meta = read_weights(path)
        cfg = TrainedCnnConfig.from_dict(meta.get("config", {}))
        expected = init_params(cfg)
        for name, value in expected.items():
            if name not in params or params[name].shape != value.shape:
                raise ShapeMismatchError(f"Weights file {path} does not match the configured network at {name}")
        return cls(cfg, params, int(meta.get("size", 0)), dict(meta.get("mask", {})),
                   [float(v) for v in meta.get("train_losses", [])])


def _training_pairs(
    manifest: DatasetManifest, mask_spec: Dict[str, Any]
) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], int]:
    size, _ = manifest.shape()
    mask = mask_from_dict(size, mask_spec)
    pairs = []
    for index in range(len(manifest)):
        volume = manifest.load(index)
        if volume.n != size:
            raise ShapeMismatchError(f"{manifest.entries[index].image_id}: size {volume.n} != {size}")
        pairs.append((zero_filled(volume.kspace, mask, volume.sens), np.abs(volume.target).astype(np.float64)))
    return pairs, size


def cnn_train(
    manifest: DatasetManifest,
    cfg: TrainedCnnConfig,
    mask_spec: Dict[str, Any],
    seed: Any = None,
    log: Optional[logging.Logger] = None,
) -> TrainedCnn:
    """
    Mini-batch Adam on mean squared error between network(zero_filled) and |x*|.

    Shuffling and initialization draw from ``seed`` (default ``cfg.seed``).
    """
    log = log or logger
    if len(manifest) == 0:
        raise InvalidSpecError("Cannot train on an empty manifest")
    pairs, size = _training_pairs(manifest, mask_spec)
    cfg.validate(size)
    run_seed = cfg.seed if seed is None else seed
    params = init_params(cfg, run_seed)
    rng = np.random.default_rng([*np.atleast_1d(run_seed).astype(int).tolist(), 1])
    optimizer = Adam(lr=cfg.lr)
    epoch_losses: List[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = {name: np.zeros_like(value) for name, value in params.items()}
            for index in batch:
                source, target = pairs[int(index)]
                tape = Tape()
                leaves = {name: tape.leaf(value, name=name) for name, value in params.items()}
                prediction = network_forward(cfg, leaves, tape.constant(source))
                loss = ops.scale(ops.sum_squares(ops.sub(prediction, target)), 1.0 / (size * size * len(batch)))
                total += check_finite(loss.item(), f"CNN loss in epoch {epoch}") * len(batch)
                leaf_grads = tape.backward(loss)
                for name, leaf in leaves.items():
                    grads[name] += leaf_grads[leaf]
            optimizer.step(params, grads)
        epoch_losses.append(total / len(pairs))
        log.debug("CNN epoch %d/%d: train MSE %.6g", epoch + 1, cfg.epochs, epoch_losses[-1])

    log.info("Trained CNN on %d volumes for %d epochs", len(pairs), cfg.epochs)
    return TrainedCnn(cfg=cfg, params=params, size=size, mask=dict(mask_spec), train_losses=epoch_losses)


def cnn_reconstruct(model: TrainedCnn, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
    BaseReconstructor.check_inputs(kspace, mask, sens)
    if model.size and model.size != sens.shape[-1]:
        raise ShapeMismatchError(f"Model trained for size {model.size}, got {sens.shape[-1]}")
    return model.predict(zero_filled(kspace, mask, sens))


class CnnReconstructor(BaseReconstructor):
    method_id = "cnn"
    differentiable = True

    def __init__(
        self,
        config: Optional[Dict[str, Any]] = None,
        logger: Optional[logging.Logger] = None,
        model: Optional[TrainedCnn] = None,
    ):
        super().__init__(config, logger)
        if model is None:
            weights = self.config.get("weights") or ""
            if not weights:
                raise MissingInputError("The cnn method needs trained weights (cnn.weights) or a model")
            model = TrainedCnn.load(weights)
        self.model = model

    def reconstruct(self, kspace: np.ndarray, mask: SamplingMask, sens: CoilSensitivities) -> np.ndarray:
        return cnn_reconstruct(self.model, kspace, mask, sens)

    def reconstruct_tensor(self, kspace: DiffTensor, mask: SamplingMask, sens: CoilSensitivities) -> DiffTensor:
        tape = kspace.tape
        leaves = {name: tape.constant(value, name=name) for name, value in self.model.params.items()}
        return network_forward(self.model.cfg, leaves, zero_filled_tensor(kspace, mask))

