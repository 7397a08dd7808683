"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``f`` is re-evaluated without a tape."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def analytic_grads(f: Callable[[], Tensor], xs: Sequence[Tensor]) -> list[np.ndarray]:
    saved = [x.requires_grad for x in xs]
    for x in xs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    grads = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]
    for x, r in zip(xs, saved):
        x.requires_grad = r
        x.grad = None
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_grads(f: Callable[[], Tensor], xs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and finite differences over ``xs``."""
    ana = analytic_grads(f, xs)
    errs = [rel_error(a, numeric_grad(f, x, h)) for a, x in zip(ana, xs)]
    return max(errs)
