"""Gated rank-1 adapters conditioned on per-object memory pointers.

A projection ``h = W0 x`` is augmented with ``R`` rank-1 components
``b_i a_i^T``. Each tracked object selects a binary subset of components
from its pointer through a shared gate MLP; the per-object deltas are
averaged over objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .numkit import ShapeError, Tensor, as_tensor
from .numkit import functional as F

Mode = Literal["train", "inference"]
Conditioning = Literal["object", "memory", "none"]
CONDITIONINGS: tuple[str, ...] = ("none", "memory", "object")


@dataclass
class Rank1AdapterBank:
    """Frozen ``W0`` (D x K) plus rows ``A[i] = a_i`` (K) and ``B[i] = b_i`` (D)."""

    W0: Tensor
    A: Tensor
    B: Tensor

    def __post_init__(self):
        D, K = self.W0.shape
        if self.A.ndim != 2 or self.A.shape[1] != K:
            raise ShapeError(f"A must be (R, {K}), got {self.A.shape}")
        if self.B.shape != (self.A.shape[0], D):
            raise ShapeError(f"B must be ({self.A.shape[0]}, {D}), got {self.B.shape}")
        self.W0.requires_grad = False

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def D(self) -> int:
        return self.W0.shape[0]

    @property
    def K(self) -> int:
        return self.W0.shape[1]

    def dense_delta(self, gate: np.ndarray | None = None) -> np.ndarray:
        """Materialize ``sum_i z_i b_i a_i^T`` (all components when ``gate`` is None)."""
        z = np.ones(self.rank) if gate is None else np.asarray(gate, dtype=np.float64)
        return (self.B.data * z[:, None]).T @ self.A.data

    def parameters(self) -> list[Tensor]:
        return [self.A, self.B]


def init_adapter(D: int, K: int, R: int, rng: np.random.Generator, W0=None,
                 std: float = 0.02, name: str = "adapter") -> Rank1AdapterBank:
    """Gaussian ``a_i`` and zero ``b_i``, so the adapter starts as a no-op."""
    if min(D, K, R) <= 0:
        raise ValueError(f"adapter dimensions must be positive, got D={D}, K={K}, R={R}")
    if W0 is None:
        W0 = Tensor(np.zeros((D, K)), name=f"{name}.W0")
    A = Tensor(rng.normal(0.0, std, size=(R, K)), requires_grad=True, name=f"{name}.A")
    B = Tensor(np.zeros((R, D)), requires_grad=True, name=f"{name}.B")
    return Rank1AdapterBank(as_tensor(W0), A, B)


@dataclass
class GateNet:
    """Three-layer MLP ``d -> hidden -> hidden -> R`` with SiLU activations."""

    layers: list[tuple[Tensor, Tensor]]

    @classmethod
    def init(cls, d: int, R: int, rng: np.random.Generator, hidden: int | None = None,
             out_bias: float = 1.0, name: str = "gate") -> "GateNet":
        hidden = hidden or d
        dims = [(d, hidden), (hidden, hidden), (hidden, R)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(dims):
            W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            b = np.full(fan_out, out_bias if i == 2 else 0.0)
            layers.append((Tensor(W, True, f"{name}.l{i}.W"), Tensor(b, True, f"{name}.l{i}.b")))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]


def gate_logits(pointer, net: GateNet) -> Tensor:
    """alpha = MLP(m_o)."""
    h = as_tensor(pointer)
    if h.shape[-1] != net.in_dim:
        raise ShapeError(f"pointer of size {h.shape[-1]} does not match gate input {net.in_dim}")
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        h = F.linear(h, W, b)
        if i < last:
            h = F.silu(h)
    return h


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel samples -log(-log U)."""
    tiny = np.finfo(np.float64).tiny
    u = np.clip(rng.random(shape), tiny, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def logistic_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Difference of two Gumbels (zero-mean alternative)."""
    return gumbel_noise(rng, shape) - gumbel_noise(rng, shape)


NOISE_SAMPLERS: dict[str, Callable] = {"gumbel": gumbel_noise, "logistic": logistic_noise}


def gumbel_sigmoid(alpha, tau: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None, sampler: Callable = gumbel_noise) -> Tensor:
    """sigma((alpha + G) / tau). Pass ``noise`` to fix G (e.g. zeros)."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    alpha = as_tensor(alpha)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_sigmoid needs an rng or explicit noise")
        noise = sampler(rng, alpha.shape)
    return F.sigmoid((alpha + np.asarray(noise, dtype=np.float64)) * (1.0 / tau))


def ste_gate(soft) -> Tensor:
    """Forward 1[soft > 0.5]; backward is the identity onto ``soft``."""
    soft = as_tensor(soft)
    return F.straight_through((soft.data > 0.5).astype(np.float64), soft)


def inference_gate(alpha) -> np.ndarray:
    """Deterministic gate 1[sigma(alpha) > 0.5] == 1[alpha > 0]."""
    a = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    return (a > 0).astype(np.float64)


@dataclass
class GateDecision:
    alpha: np.ndarray
    hard: np.ndarray
    tau: float
    mode: Mode
    soft: np.ndarray | None = None


def moga_forward(x, bank: Rank1AdapterBank, gates: Sequence) -> Tensor:
    """W0 x + (1/O) sum_o sum_i z_{o,i} b_i (a_i^T x), evaluated in factored form."""
    if len(gates) == 0:
        raise ValueError("moga_forward needs at least one object gate")
    x = as_tensor(x)
    base = F.linear(x, bank.W0)
    proj = F.linear(x, bank.A)  # (N, R): a_i^T x
    deltas = []
    for z in gates:
        z = as_tensor(z)
        if z.shape != (bank.rank,):
            raise ShapeError(f"gate of shape {z.shape} for rank {bank.rank}")
        deltas.append(F.matmul(proj * z, bank.B))
    total = deltas[0]
    for d in deltas[1:]:
        total = total + d
    if len(deltas) > 1:
        total = total * (1.0 / len(deltas))
    return base + total


def temperature_at(step: int, total_steps: int, target: float = 0.3, start: float = 1.0,
                   anneal_frac: float = 0.5) -> float:
    """Linear decay from ``start`` to ``target`` over the first ``anneal_frac`` of training."""
    horizon = max(1, int(round(anneal_frac * total_steps)))
    if total_steps <= 1 or step >= horizon:
        return target
    return start + (target - start) * step / horizon


@dataclass
class MoGAProjection:
    """One adapted projection: its adapter bank, gate net and conditioning variant."""

    bank: Rank1AdapterBank
    gate: GateNet
    conditioning: Conditioning = "object"
    const: Tensor | None = None
    sampler: str = "gumbel"
    last: list[GateDecision] = field(default_factory=list, repr=False)

    def parameters(self) -> list[Tensor]:
        ps = self.bank.parameters() + self.gate.parameters()
        if self.const is not None:
            ps.append(self.const)
        return ps

    def gates(self, pointers: Sequence[np.ndarray], mode: Mode, tau: float,
              rng: np.random.Generator | None = None) -> list[Tensor]:
        """One gate vector per object from the current pointers."""
        O = len(pointers)
        if O == 0:
            raise ValueError("no object pointers to condition on")
        if self.conditioning == "object":
            inputs = [Tensor(p) for p in pointers]
        elif self.conditioning == "memory":
            inputs = [Tensor(np.mean(np.stack(pointers), axis=0))]
        elif self.conditioning == "none":
            inputs = [self.const]
        else:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")

        out, self.last = [], []
        for inp in inputs:
            alpha = gate_logits(inp, self.gate)
            if mode == "train":
                soft = gumbel_sigmoid(alpha, tau, rng, sampler=NOISE_SAMPLERS[self.sampler])
                z = ste_gate(soft)
                self.last.append(GateDecision(alpha.data.copy(), z.data.copy(), tau, mode, soft.data.copy()))
            elif mode == "inference":
                z = Tensor(inference_gate(alpha))
                self.last.append(GateDecision(alpha.data.copy(), z.data.copy(), tau, mode))
            else:
                raise ValueError(f"unknown mode {mode!r}")
            out.append(z)
        if len(out) == 1 and O > 1:
            out = out * O
            self.last = self.last * O
        return out

    def __call__(self, x, pointers, mode: Mode, tau: float, rng=None) -> Tensor:
        return moga_forward(x, self.bank, self.gates(pointers, mode, tau, rng))


def make_projection(W0: Tensor, R: int, d_pointer: int, rng: np.random.Generator,
                    conditioning: Conditioning = "object", sampler: str = "gumbel",
                    name: str = "proj") -> MoGAProjection:
    D, K = W0.shape
    bank = init_adapter(D, K, R, rng, W0=W0, name=f"{name}.adapter")
    gate = GateNet.init(d_pointer, R, rng, name=f"{name}.gate")
    const = None
    if conditioning == "none":
        const = Tensor(rng.normal(0.0, 1.0, size=d_pointer), True, f"{name}.gate.const")
    return MoGAProjection(bank, gate, conditioning, const, sampler)
