"""Dense float64 tensors and a tape for reverse-mode differentiation.

A :class:`Tensor` wraps a row-major ``numpy.ndarray`` of dtype float64.
Kernels in :mod:`lgrnet.numkit.ops` create new tensors and, while a
:class:`Tape` is active and any input has ``requires_grad`` set, append a
record holding the backward closure.  :func:`grad` replays the tape in
reverse order.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a kernel produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt an existing float64 array without copying."""
        t = cls.__new__(cls)
        t.data = np.require(arr, dtype=np.float64, requirements="C")
        t.requires_grad = False
        t.name = None
        return t

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records differentiable operations executed inside a ``with`` block.

    Tapes are bound to the current thread; nesting is not supported.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __enter__(self) -> "Tape":
        if getattr(_state, "tape", None) is not None:
            raise RuntimeError("a tape is already active in this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Propagate adjoints from ``root``; returns a map ``id(tensor) -> grad``."""
        if seed is None:
            if root.size != 1:
                raise ValueError(f"gradient root must be scalar, got shape {root.shape}")
            seed = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(seed, dtype=np.float64)}
        for out, inputs, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads


_state = threading.local()


def active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap a kernel output and register it on the active tape when needed."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("kernel produced a non-finite value")
    out = Tensor.wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def grad(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> list[np.ndarray]:
    """Reverse-mode gradients of the scalar ``fn()`` w.r.t. ``params``.

    Parameters never reached from the root get zero gradients.
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ValueError(f"parameter {p.name or p!r} is detached (requires_grad=False)")
    with Tape() as tape:
        root = fn()
    if not isinstance(root, Tensor):
        raise TypeError("fn must return a Tensor")
    if root.size != 1:
        raise ValueError(f"gradient root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return [np.zeros_like(p.data) for p in params]
    table = tape.backward(root)
    return [table.get(id(p), np.zeros_like(p.data)) for p in params]


def value_and_grad(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> tuple[Tensor, list[np.ndarray]]:
    params = list(params)
    holder: list[Tensor] = []

    def wrapped():
        out = fn()
        holder.append(out)
        return out

    grads = grad(wrapped, params)
    return holder[0], grads
