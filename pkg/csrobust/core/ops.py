"""
Differentiable op set. Every op computes its forward value with numpy and records a
vector-Jacobian closure; ``OPSET`` lists them by name for gradient checks.

Image tensors are per sample, (C, H, W). Complex tensors use the paired layout
(..., 2, H, W).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from csrobust.core.autodiff import ArrayLike, DiffTensor, from_pair, to_pair
from csrobust.core.errors import InvalidSpecError, ShapeMismatchError
from csrobust.core.fourier import fft2c, ifft2c

MAGNITUDE_DELTA = 1e-12

OPSET: Dict[str, Callable[..., DiffTensor]] = {}


def register(name: str) -> Callable[[Callable[..., DiffTensor]], Callable[..., DiffTensor]]:
    def wrap(fn: Callable[..., DiffTensor]) -> Callable[..., DiffTensor]:
        OPSET[name] = fn
        return fn

    return wrap


def _lift(reference: DiffTensor, other: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    if isinstance(other, DiffTensor):
        return other
    return reference.tape.constant(other)


def _same_shape(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@register("add")
def add(a: DiffTensor, b: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    b = _lift(a, b)
    _same_shape("add", a, b)
    return a.tape.record(a.value + b.value, (a, b), lambda g: (g, g), "add")


@register("sub")
def sub(a: DiffTensor, b: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    b = _lift(a, b)
    _same_shape("sub", a, b)
    return a.tape.record(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


@register("scale")
def scale(a: DiffTensor, alpha: float) -> DiffTensor:
    alpha = float(alpha)
    return a.tape.record(alpha * a.value, (a,), lambda g: (alpha * g,), "scale")


@register("mul")
def mul(a: DiffTensor, b: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    """Element-wise product of equally shaped tensors."""
    b = _lift(a, b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


@register("reshape")
def reshape(a: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    original = a.shape
    return a.tape.record(a.value.reshape(tuple(shape)), (a,), lambda g: (g.reshape(original),), "reshape")


@register("concat")
def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    """Concatenate along ``axis`` (channels by default)."""
    if not tensors:
        raise ShapeMismatchError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=axis))

    value = np.concatenate([t.value for t in tensors], axis=axis)
    return tensors[0].tape.record(value, tuple(tensors), vjp, "concat")


@register("relu")
def relu(a: DiffTensor) -> DiffTensor:
    positive = a.value > 0
    return a.tape.record(a.value * positive, (a,), lambda g: (g * positive,), "relu")


@register("leaky_relu")
def leaky_relu(a: DiffTensor, slope: float = 0.01) -> DiffTensor:
    factor = np.where(a.value > 0, 1.0, float(slope))
    return a.tape.record(a.value * factor, (a,), lambda g: (g * factor,), "leaky_relu")


@register("channel_affine")
def channel_affine(x: DiffTensor, gain: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Per-channel gain and bias on (C, H, W); stands in for a normalization layer."""
    channels = x.shape[0]
    if gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeMismatchError(
            f"channel_affine: gain {gain.shape} / bias {bias.shape} must be ({channels},)"
        )
    xv, gv = x.value, gain.value

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return g * gv[:, None, None], np.sum(g * xv, axis=(1, 2)), np.sum(g, axis=(1, 2))

    value = gv[:, None, None] * xv + bias.value[:, None, None]
    return x.tape.record(value, (x, gain, bias), vjp, "channel_affine")


def _patches(x: np.ndarray, kernel: int) -> np.ndarray:
    pad = kernel // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    # (C, H, W, k, k)
    return sliding_window_view(padded, (kernel, kernel), axis=(1, 2))


@register("conv2d")
def conv2d(x: DiffTensor, weight: DiffTensor, bias: DiffTensor = None) -> DiffTensor:
    """
    Stride-1, zero-padded ("same") 2D cross-correlation.

    ``x`` is (C_in, H, W), ``weight`` is (C_out, C_in, k, k) with odd k, ``bias`` is (C_out,).
    """
    c_out, c_in, kernel, kernel_w = weight.shape
    if kernel != kernel_w or kernel % 2 == 0:
        raise InvalidSpecError(f"conv2d needs an odd square kernel, got {kernel}x{kernel_w}")
    if x.shape[0] != c_in:
        raise ShapeMismatchError(f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}")

    wv = weight.value
    patches = _patches(x.value, kernel)
    value = np.tensordot(wv, patches, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeMismatchError(f"conv2d: bias {bias.shape} must be ({c_out},)")
        value = value + bias.value[:, None, None]

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        grad_w = np.tensordot(g, patches, axes=([1, 2], [1, 2]))
        flipped = wv[:, :, ::-1, ::-1]
        grad_x = np.tensordot(flipped, _patches(g, kernel), axes=([0, 2, 3], [0, 3, 4]))
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, np.sum(g, axis=(1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return x.tape.record(value, parents, vjp, "conv2d")


@lru_cache(maxsize=16)
def _bilinear_matrix(size: int) -> np.ndarray:
    # Half-pixel aligned 2x interpolation, edges clamped.
    matrix = np.zeros((2 * size, size))
    for out in range(2 * size):
        src = min(max((out + 0.5) / 2.0 - 0.5, 0.0), size - 1.0)
        low = int(np.floor(src))
        high = min(low + 1, size - 1)
        frac = src - low
        matrix[out, low] += 1.0 - frac
        matrix[out, high] += frac
    matrix.setflags(write=False)
    return matrix


@register("upsample2x")
def upsample2x(x: DiffTensor, mode: str = "nearest") -> DiffTensor:
    """2x spatial upsampling of the last two axes, ``nearest`` or ``bilinear``."""
    height, width = x.shape[-2:]
    if mode == "nearest":
        value = np.repeat(np.repeat(x.value, 2, axis=-2), 2, axis=-1)

        def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
            blocks = g.reshape(g.shape[:-2] + (height, 2, width, 2))
            return (blocks.sum(axis=(-3, -1)),)

    elif mode == "bilinear":
        rows, cols = _bilinear_matrix(height), _bilinear_matrix(width)
        value = np.einsum("ij,...jk,lk->...il", rows, x.value, cols)

        def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
            return (np.einsum("ij,...il,lk->...jk", rows, g, cols),)

    else:
        raise InvalidSpecError(f"Unknown upsample mode {mode!r}; expected nearest or bilinear")
    return x.tape.record(value, (x,), vjp, f"upsample2x_{mode}")


@register("avg_pool2x")
def avg_pool2x(x: DiffTensor) -> DiffTensor:
    height, width = x.shape[-2:]
    if height % 2 or width % 2:
        raise ShapeMismatchError(f"avg_pool2x needs even spatial size, got {height}x{width}")
    blocks = x.value.reshape(x.shape[:-2] + (height // 2, 2, width // 2, 2))

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) / 4.0,)

    return x.tape.record(blocks.mean(axis=(-3, -1)), (x,), vjp, "avg_pool2x")


def _check_pair(op: str, x: DiffTensor) -> None:
    if len(x.shape) < 3 or x.shape[-3] != 2:
        raise ShapeMismatchError(f"{op} expects paired layout (..., 2, H, W), got {x.shape}")


@register("fft2")
def fft2(x: DiffTensor) -> DiffTensor:
    """Centered unitary DFT on the paired layout; the adjoint is the inverse DFT."""
    _check_pair("fft2", x)
    value = to_pair(fft2c(from_pair(x.value)))
    return x.tape.record(value, (x,), lambda g: (to_pair(ifft2c(from_pair(g))),), "fft2")


@register("ifft2")
def ifft2(x: DiffTensor) -> DiffTensor:
    _check_pair("ifft2", x)
    value = to_pair(ifft2c(from_pair(x.value)))
    return x.tape.record(value, (x,), lambda g: (to_pair(fft2c(from_pair(g))),), "ifft2")


@register("column_mask")
def column_mask(x: DiffTensor, keep: np.ndarray) -> DiffTensor:
    """Zero the unsampled k-space columns (last axis); self-adjoint."""
    keep = np.asarray(keep, dtype=np.float64)
    if keep.shape != (x.shape[-1],):
        raise ShapeMismatchError(f"column_mask: mask {keep.shape} does not match width {x.shape[-1]}")
    return x.tape.record(x.value * keep, (x,), lambda g: (g * keep,), "column_mask")


@register("complex_mul")
def complex_mul(x: DiffTensor, factor: np.ndarray) -> DiffTensor:
    """
    Multiply the paired tensor by a constant complex array (broadcasting allowed), e.g.
    coil sensitivities (n_c, H, W) times an image (2, H, W) -> (n_c, 2, H, W).
    """
    _check_pair("complex_mul", x)
    factor = np.asarray(factor, dtype=np.complex128)
    z = from_pair(x.value)
    z_shape = z.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = _unbroadcast(np.conj(factor) * from_pair(g), z_shape)
        return (to_pair(grad),)

    return x.tape.record(to_pair(factor * z), (x,), vjp, "complex_mul")


@register("magnitude")
def magnitude(x: DiffTensor, delta: float = MAGNITUDE_DELTA) -> DiffTensor:
    """sqrt(a^2 + b^2 + delta); (..., 2, H, W) -> (..., H, W)."""
    _check_pair("magnitude", x)
    re, im = x.value[..., 0, :, :], x.value[..., 1, :, :]
    value = np.sqrt(re ** 2 + im ** 2 + delta)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.stack([g * re / value, g * im / value], axis=-3),)

    return x.tape.record(value, (x,), vjp, "magnitude")


@register("rss")
def rss(x: DiffTensor, delta: float = MAGNITUDE_DELTA) -> DiffTensor:
    """Root-sum-of-squares over coils; (n_c, 2, H, W) -> (H, W)."""
    _check_pair("rss", x)
    if len(x.shape) != 4:
        raise ShapeMismatchError(f"rss expects (n_coils, 2, H, W), got {x.shape}")
    xv = x.value
    value = np.sqrt(np.sum(xv ** 2, axis=(0, 1)) + delta)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        return ((g / value)[None, None] * xv,)

    return x.tape.record(value, (x,), vjp, "rss")


@register("sum_squares")
def sum_squares(x: DiffTensor) -> DiffTensor:
    xv = x.value
    return x.tape.record(np.sum(xv ** 2), (x,), lambda g: (2.0 * g * xv,), "sum_squares")


@register("sum")
def total(x: DiffTensor) -> DiffTensor:
    shape = x.shape
    return x.tape.record(np.sum(x.value), (x,), lambda g: (np.full(shape, float(g)),), "sum")
