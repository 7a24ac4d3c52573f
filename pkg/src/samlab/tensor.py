"""Small reverse-mode differentiation engine over float64 numpy arrays.

Values are computed eagerly. When a :class:`Tape` is active, every primitive
appends an entry holding its operands, its output and a vector-Jacobian
closure; :func:`backward` walks those entries once in reverse.

Only row-vector bias broadcasting is supported (``(N, k) + (k,)``); every
other primitive needs exactly matching shapes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name!r} has non-finite entries")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; all routes go through the recorded primitives
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Ordered record of primitives executed while the tape is active.

    Use as a context manager; tapes nest, and the innermost one records.
    A tape belongs to the thread that opened it.
    """

    entries: list[TapeEntry] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: non-finite output")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.name = None
    tape = active_tape()
    if tape is not None:
        tape.record(TapeEntry(op, tuple(inputs), out, vjp))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_row_bias(a: Tensor, b: Tensor) -> bool:
    return a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]


# --- primitives -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if _is_row_bias(a, b):
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    if _is_row_bias(b, a):
        return _emit("add", (a, b), a.data + b.data, lambda g: (g.sum(axis=0), g))
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("subtract", a, b)
    return _emit("subtract", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("multiply", a, b)
    av, bv = a.data, b.data
    return _emit("multiply", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), c * a.data, lambda g: (c * g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(n, k) @ (k, m)`` or ``(n, k) @ (k,)``."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.data, b.data
    if bv.ndim == 1:
        return _emit("matmul", (a, b), av @ bv, lambda g: (np.outer(g, bv), av.T @ g))
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    if n == 0:
        raise ShapeError("mean: empty tensor")
    return _emit("mean", (a,), np.array(a.data.mean()), lambda g: (np.full(shape, float(g) / n),))


def sq_norm(a: Tensor) -> Tensor:
    """Squared L2 norm of all entries."""
    av = a.data
    return _emit("sq_norm", (a,), np.array(np.sum(av * av)), lambda g: (2.0 * float(g) * av,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit("reshape", (a,), value, lambda g: (g.reshape(old),))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer class ids."""
    z = logits.data
    labels = np.asarray(labels)
    if z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-D, got {z.shape}")
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: shape mismatch {z.shape} vs labels {labels.shape}")
    if labels.dtype.kind not in "iu":
        if not np.all(labels == np.round(labels)):
            raise ValueError("softmax_cross_entropy: labels must be integer class ids")
        labels = labels.astype(np.int64)
    n, c = z.shape
    if n == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_cross_entropy: labels outside [0, {c})")
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(n)
    value = np.array(np.mean(lse - shift[rows, labels]))

    def vjp(g):
        p = np.exp(shift - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / n),)

    return _emit("softmax_cross_entropy", (logits,), value, vjp)


# --- reverse sweep ----------------------------------------------------------

def backward(tape: Tape, output: Tensor, wrt: Iterable[Tensor] = ()) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate d(output)/d(leaf) for every ``requires_grad`` leaf.

    Returns a map from tensor to gradient array and also stores each result in
    ``tensor.grad``. Tensors listed in ``wrt`` that the output does not depend
    on get a zero gradient.
    """
    if output.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    index = {id(e.output): i for i, e in enumerate(tape.entries)}
    if id(output) not in index:
        raise ValueError("backward: output was not produced on this tape")

    produced = set(index)
    adj: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries[: index[id(output)] + 1]):
        g = adj.pop(id(entry.output), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            adj[key] = adj[key] + gi if key in adj else gi
            if key not in produced:
                leaves[key] = t

    grads: dict[Tensor, np.ndarray] = {}
    for key, t in leaves.items():
        grads[t] = adj[key]
    for t in wrt:
        if t not in grads:
            grads[t] = np.zeros_like(t.data)
    for t, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"backward: non-finite gradient for {t!r}")
        t.grad = g
    return grads


def grad(fn: Callable[..., Tensor], params: Sequence[Tensor], *args, **kwargs) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn`` on a fresh tape; return its value and gradients for ``params``."""
    with Tape() as tape:
        out = fn(*args, **kwargs)
    grads = backward(tape, out, wrt=params)
    return out.item(), [grads[p] for p in params]
