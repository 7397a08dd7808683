"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, ShapeError, Tensor


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    owner: int | None = field(default=None, repr=False)

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamWState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), owner=id(param), **hyper)


def adamw_step(param: Tensor, grad: np.ndarray, state: AdamWState) -> None:
    """One in-place AdamW update of ``param``; decay is applied before the moments."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError(f"adamw: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if state.owner is not None and state.owner != id(param):
        raise ValueError(f"adamw: state does not belong to parameter {param.name!r}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.sum(~np.isfinite(grad)))
        raise NumericError(param.name or "<unnamed>", f"{bad} non-finite gradient entries")

    state.step += 1
    lr = state.lr
    if state.weight_decay:
        param.data *= 1.0 - lr * state.weight_decay
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class AdamW:
    """Holds one :class:`AdamWState` per parameter."""

    def __init__(self, params, lr=1e-3, weight_decay=0.1, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.states = [
            AdamWState.for_param(p, lr=lr, weight_decay=weight_decay,
                                 beta1=betas[0], beta2=betas[1], eps=eps)
            for p in self.params
        ]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p, g, s)

    def set_lr(self, lr: float) -> None:
        for s in self.states:
            s.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
