"""
Tape-based reverse-mode differentiation over real numpy arrays.

Complex data travels as paired real channels with layout (..., 2, H, W), index 0 the
real part and index 1 the imaginary part. Ops live in :mod:`csrobust.core.ops`; each
records its output value together with a vector-Jacobian closure on the tape.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from csrobust.core.errors import InvalidSpecError, NumericalFailureError, ShapeMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int]
VjpFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class DiffTensor:
    """A value recorded on a tape. Leaves carry ``grad`` after :meth:`Tape.backward`."""

    __slots__ = ("value", "tape", "node_id", "requires_grad", "grad", "name")

    def __init__(
        self,
        value: np.ndarray,
        tape: "Tape",
        node_id: int,
        requires_grad: bool,
        name: Optional[str] = None,
    ):
        self.value = value
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        return int(self.value.size)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeMismatchError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.value.reshape(()))

    def __add__(self, other: Union["DiffTensor", ArrayLike]) -> "DiffTensor":
        from csrobust.core import ops

        return ops.add(self, other)

    def __sub__(self, other: Union["DiffTensor", ArrayLike]) -> "DiffTensor":
        from csrobust.core import ops

        return ops.sub(self, other)

    def __mul__(self, other: Union["DiffTensor", ArrayLike]) -> "DiffTensor":
        from csrobust.core import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "DiffTensor":
        from csrobust.core import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, node={self.node_id}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    output_id: int
    parents: Tuple[DiffTensor, ...]
    vjp: VjpFn
    op: str


class Tape:
    """
    Records ops in execution order, which is a valid topological order.

    One tape belongs to one task; tapes are never shared between threads.
    """

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._leaves: List[DiffTensor] = []
        self._ids = itertools.count()

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value: ArrayLike, name: Optional[str] = None, requires_grad: bool = True) -> DiffTensor:
        array = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NumericalFailureError(f"Leaf {name or ''} holds non-finite values")
        tensor = DiffTensor(array, self, next(self._ids), requires_grad, name)
        if requires_grad:
            self._leaves.append(tensor)
        return tensor

    def constant(self, value: ArrayLike, name: Optional[str] = None) -> DiffTensor:
        return self.leaf(value, name=name, requires_grad=False)

    def record(
        self,
        value: np.ndarray,
        parents: Sequence[DiffTensor],
        vjp: VjpFn,
        op: str,
    ) -> DiffTensor:
        """Register the output of ``op``; called by every op in :mod:`csrobust.core.ops`."""
        for parent in parents:
            if parent.tape is not self:
                raise InvalidSpecError(f"Op {op} mixes tensors from different tapes")
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericalFailureError(f"NaN or Inf detected in forward pass of op {op}")
        requires_grad = any(parent.requires_grad for parent in parents)
        tensor = DiffTensor(value, self, next(self._ids), requires_grad)
        if requires_grad:
            self._nodes.append(_Node(tensor.node_id, tuple(parents), vjp, op))
        return tensor

    @property
    def leaves(self) -> List[DiffTensor]:
        return list(self._leaves)

    def backward(self, loss: DiffTensor) -> Dict[DiffTensor, np.ndarray]:
        """
        Reverse sweep from a scalar ``loss``; returns leaf -> gradient and sets ``leaf.grad``.

        Gradients accumulate additively over fan-out.
        """
        if loss.tape is not self:
            raise InvalidSpecError("Loss tensor was recorded on a different tape")
        if loss.size != 1:
            raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.value)}
        for node in reversed(self._nodes):
            upstream = grads.pop(node.output_id, None)
            if upstream is None:
                continue
            parent_grads = node.vjp(upstream)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.value.shape:
                    raise ShapeMismatchError(
                        f"Adjoint of {node.op} returned shape {grad.shape} for input {parent.shape}"
                    )
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + grad
                else:
                    grads[parent.node_id] = grad

        result: Dict[DiffTensor, np.ndarray] = {}
        for leaf in self._leaves:
            grad = grads.get(leaf.node_id, np.zeros_like(leaf.value))
            if not np.all(np.isfinite(grad)):
                raise NumericalFailureError(f"Non-finite gradient for leaf {leaf.name or leaf.node_id}")
            leaf.grad = grad
            result[leaf] = grad
        return result

    def reset(self) -> None:
        """Drop recorded ops and leaf gradients so the tape can record a fresh graph."""
        self._nodes.clear()
        for leaf in self._leaves:
            leaf.grad = None


def value_and_grad(
    fn: Callable[..., DiffTensor],
    *arrays: np.ndarray,
) -> Tuple[float, List[np.ndarray]]:
    """Evaluate ``fn(tape, *leaves)`` on a fresh tape and return (loss, grads per array)."""
    tape = Tape()
    leaves = [tape.leaf(array, name=f"arg{index}") for index, array in enumerate(arrays)]
    loss = fn(tape, *leaves)
    grads = tape.backward(loss)
    return loss.item(), [grads[leaf] for leaf in leaves]


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-6,
    central: bool = False,
) -> np.ndarray:
    """
    Numerical gradient of a scalar function, one coordinate at a time.

    Forward differences use (f(x + h e_i) - f(x)) / h; central differences use
    (f(x + h e_i) - f(x - h e_i)) / (2h). Test oracle only; cost is one or two
    evaluations per coordinate.
    """
    if h <= 0:
        raise InvalidSpecError(f"Finite-difference step must be > 0, got {h}")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    base = None if central else float(f(x))
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + h
        upper = float(f(x))
        if central:
            flat[index] = original - h
            lower = float(f(x))
            grad[index] = (upper - lower) / (2.0 * h)
        else:
            grad[index] = (upper - base) / h
        flat[index] = original
    return grad.reshape(x.shape)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale


def to_pair(z: np.ndarray) -> np.ndarray:
    """Complex array (..., H, W) -> real pair layout (..., 2, H, W)."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-3).astype(np.float64)


def from_pair(x: np.ndarray) -> np.ndarray:
    """Real pair layout (..., 2, H, W) -> complex array (..., H, W)."""
    x = np.asarray(x)
    if x.ndim < 3 or x.shape[-3] != 2:
        raise ShapeMismatchError(f"Expected paired layout (..., 2, H, W), got {x.shape}")
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]
