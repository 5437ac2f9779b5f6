"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside a ``with GradTape() as tape:`` block are recorded
whenever at least one input requires a gradient. ``tape.backward(loss)``
replays the records in reverse and writes ``.grad`` on every participating
tensor. Outside a tape nothing is recorded, so inference never mutates state.

    >>> w = Tensor([[2.0]], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = (w * w).sum()
    >>> _ = tape.backward(loss)
    >>> w.grad
    array([[4.]])
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_ACTIVE_TAPES: list["GradTape"] = []


class GradTape:
    """Ordered record of differentiable operations.

    Use one tape per training step; a fresh tape is the clearing mechanism.
    """

    def __init__(self):
        self.records: list[tuple[tuple[Tensor, ...], Tensor, BackwardFn]] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: "Tensor", wrt: Iterable["Tensor"] | None = None) -> dict["Tensor", np.ndarray]:
        """Propagate d(loss)/d(.) through the recorded operations.

        Every tensor on the tape with ``requires_grad`` gets ``.grad`` set,
        zero when the loss does not depend on it. Tensors listed in ``wrt``
        that never touched the tape also receive a zero gradient. Returns a
        mapping from each ``wrt`` tensor (or, if omitted, each leaf tensor
        on the tape) to its gradient.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(out is loss for _, out, _ in self.records):
            raise RuntimeError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for inputs, out, fn in reversed(self.records):
            g = grads.get(id(out))
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi

        seen: dict[int, Tensor] = {}
        produced: set[int] = set()
        for inputs, out, _ in self.records:
            produced.add(id(out))
            for t in (*inputs, out):
                if t.requires_grad:
                    seen[id(t)] = t
        for key, t in seen.items():
            g = grads.get(key)
            t.grad = g if g is not None else np.zeros_like(t.data)

        if wrt is None:
            targets = [t for key, t in seen.items() if key not in produced]
        else:
            targets = list(wrt)
            for t in targets:
                if id(t) not in seen:
                    t.grad = np.zeros_like(t.data)
        return {t: t.grad for t in targets}


def _current_tape() -> GradTape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record_op(data: np.ndarray, inputs: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
    """Wrap ``data`` as the output of a differentiable op.

    ``backward`` maps the output gradient to one gradient per input
    (``None`` where an input is constant).
    """
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad)
    tape = _current_tape()
    if requires_grad and tape is not None:
        tape.records.append((tuple(inputs), out, backward))
    return out


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """N-dimensional float64 array that can participate in a gradient tape."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.nan_detected = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing size-1 stretching."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return record_op(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return record_op(
        a.data * b.data, (a, b),
        lambda g: (
            unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(x: Tensor) -> Tensor:
    return record_op(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    return record_op(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sin(x: Tensor) -> Tensor:
    return record_op(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
    return record_op(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


_ELEMENTWISE = {
    "add": add,
    "hadamard": hadamard,
    "relu": relu,
    "sin": sin,
    "cos": cos,
    "scale": scale,
}


def elementwise(op: str, *args):
    """Dispatch by name: ``elementwise("relu", x)``, ``elementwise("scale", x, 2.0)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# --- structural ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot matmul shapes {a.shape} and {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    if b.ndim == 2 and a.ndim > 2:
        # stacked input against one weight matrix: a single GEMM over all rows
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[-1])

        def backward_shared(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (
                (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None,
                a2.T @ g2 if b.requires_grad else None,
            )

        return record_op(out, (a, b), backward_shared)

    def backward(g):
        return (
            unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None,
            unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None,
        )

    return record_op(a.data @ b.data, (a, b), backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"{axes} is not a permutation of the {x.ndim} axes of shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return record_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def transpose_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return record_op(out, (x,), lambda g: (g.reshape(x.shape),))


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    A slice containing NaN yields NaN; the output carries
    ``nan_detected=True`` and a warning is logged.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    out = record_op(s, (x,), backward)
    if np.isnan(x.data).any():
        out.nan_detected = True
        logger.warning("softmax_last: NaN in input of shape %s propagated to output", x.shape)
    return out


# --- reductions ------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    return record_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def tmean(x: Tensor) -> Tensor:
    n = x.size
    return record_op(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))
