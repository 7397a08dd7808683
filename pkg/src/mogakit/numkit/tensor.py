"""Tensor container and the reverse-mode tape."""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(RuntimeError):
    """Raised when a NaN/Inf shows up in a loss or gradient."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        super().__init__(f"non-finite values in {name!r}" + (f": {detail}" if detail else ""))


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        # True for non-leaf outputs recorded on a tape
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def needs_grad(self) -> bool:
        return self.requires_grad or self._tracked

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the functional module holds the rules
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    @property
    def T(self):
        from . import functional as F
        return F.transpose(self)

    def sum(self):
        from . import functional as F
        return F.sum(self)

    def mean(self):
        from . import functional as F
        return F.mean(self)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.backward = backward


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    st = _stack()
    return st[-1] if st else None


class Tape:
    """Records differentiable operations inside a ``with`` block.

    Each thread has its own tape stack. ``backward`` may be run once; leaf
    tensors with ``requires_grad`` receive gradients additively in ``.grad``.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        st = _stack()
        if st and st[-1] is self:
            st.pop()

    def __len__(self) -> int:
        return len(self.ops)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        if self._spent:
            raise TapeError("tape already consumed by backward(); open a new tape")
        out._tracked = True
        self.ops.append(_Op(out, inputs, backward))

    def backward(self, loss: Tensor, check_finite: bool = True) -> None:
        if self._spent:
            raise TapeError("backward() called twice on the same tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True
        if check_finite and not np.all(np.isfinite(loss.data)):
            raise NumericError(loss.name or "loss", f"value {loss.data!r}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            g = grads.pop(id(op.out), None)
            if g is None:
                continue
            in_grads = op.backward(g)
            for t, gi in zip(op.inputs, in_grads):
                if gi is None or not t.needs_grad:
                    continue
                if t._tracked:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    _accumulate(t, gi)
        # loss itself may be a leaf (degenerate tape)
        if not loss._tracked and loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))

        if check_finite:
            for op in self.ops:
                for t in op.inputs:
                    if t.requires_grad and t.grad is not None and not np.all(np.isfinite(t.grad)):
                        raise NumericError(t.name or "<unnamed parameter>", "gradient")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Attach ``backward`` to ``out`` if a tape is open and any input needs grad."""
    tape = active_tape()
    if tape is not None and any(t.needs_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out
