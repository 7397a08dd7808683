"""Toy streaming-memory video segmentation model with MoGA attachment points.

Per frame: patch encoder -> one memory-attention block (self-attention over
the current tokens, cross-attention into a ring buffer of past frames) ->
pointer-queried mask head. Object pointers are mask-pooled token averages
kept up to date with an EMA. MoGA adapts the self-attention Q/K/V and the
cross-attention Q projections.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .moga import CONDITIONINGS, MoGAProjection, make_projection
from .numkit import ShapeError, Tensor
from .numkit import functional as F
from .numkit.functional import EmptyMemoryError

ADAPTED = ("self.q", "self.k", "self.v", "cross.q")
LN_PARAMS = ("enc.ln.g", "enc.ln.b", "ln1.g", "ln1.b", "ln2.g", "ln2.b")


class DegeneratePromptError(ValueError):
    pass


@dataclass
class ModelConfig:
    image_size: int = 64
    patch: int = 4
    dim: int = 32
    mem_capacity: int = 6
    max_objects: int = 3
    rank: int = 16
    tau: float = 0.3
    pointer_ema: float = 0.5
    ln_eps: float = 1e-5
    conditioning: str = "object"
    gumbel_sampler: str = "gumbel"

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch}")
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")
        if self.conditioning not in CONDITIONINGS:
            raise ValueError(f"conditioning must be one of {CONDITIONINGS}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel-centred bilinear interpolation weights."""
    M = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w = src - i0
        M[i, i0] += 1.0 - w
        M[i, i1] += w
    return M


def positional_codes(grid: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal codes, (grid*grid, dim)."""
    quarter = dim // 4
    freqs = 1.0 / (10.0 ** (np.arange(quarter) / max(quarter, 1)))
    ys, xs = np.mgrid[0:grid, 0:grid]
    parts = []
    for coord in (ys.ravel(), xs.ravel()):
        ang = coord[:, None] * freqs[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    pe = np.concatenate(parts, axis=1)
    if pe.shape[1] < dim:
        pe = np.pad(pe, ((0, 0), (0, dim - pe.shape[1])))
    return pe


def patchify(frame: np.ndarray, patch: int) -> np.ndarray:
    H, W, C = frame.shape
    g, h = H // patch, W // patch
    return frame.reshape(g, patch, h, patch, C).transpose(0, 2, 1, 3, 4).reshape(g * h, patch * patch * C)


def downsample_mask(mask: np.ndarray, patch: int) -> np.ndarray:
    """Per-token foreground fraction, flattened to (n_tokens,)."""
    H, W = mask.shape
    return mask.astype(np.float64).reshape(H // patch, patch, W // patch, patch).mean(axis=(1, 3)).ravel()


def pool_tokens(tokens: np.ndarray, mask: np.ndarray, patch: int) -> np.ndarray | None:
    w = downsample_mask(mask, patch)
    s = w.sum()
    if s <= 0:
        return None
    return (w[:, None] * tokens).sum(axis=0) / s


@dataclass
class MemoryBank:
    capacity: int
    entries: deque = field(default_factory=deque)   # (frame index, (N, d) array)
    pointers: list[np.ndarray] = field(default_factory=list)
    frame_count: int = 0

    @property
    def O(self) -> int:
        return len(self.pointers)

    def memory_tokens(self) -> np.ndarray:
        if not self.entries:
            raise EmptyMemoryError("memory bank is empty; call bootstrap_first_frame first")
        return np.concatenate([e for _, e in self.entries], axis=0)

    def push(self, frame_idx: int, tokens: np.ndarray) -> None:
        self.entries.append((frame_idx, tokens))
        while len(self.entries) > self.capacity:
            self.entries.popleft()


@dataclass
class Prediction:
    logits: np.ndarray          # (O, T, H, W); frame 0 holds +/-1 from the prompts
    masks: np.ndarray           # (O, T, H, W) bool
    gates: list[dict[str, np.ndarray]] = field(default_factory=list)  # per frame: proj -> (O, R)
    pointers: list[np.ndarray] = field(default_factory=list)          # per frame: (O, d)


class StreamSegModel:
    """Parameters live in ``params``; MoGA projections (if attached) in ``moga``."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor],
                 moga: dict[str, MoGAProjection] | None = None):
        self.cfg = cfg
        self.params = params
        self.moga = moga or {}
        g = cfg.grid
        self._pos = positional_codes(g, cfg.dim)
        self._up = bilinear_matrix(g, cfg.image_size)

    # ------------------------------------------------------------ construction

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "StreamSegModel":
        d, pin = cfg.dim, cfg.patch * cfg.patch * 3
        p: dict[str, Tensor] = {}

        def w(name, shape, fan_in):
            p[name] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), name=name)

        w("enc.W", (d, pin), pin)
        p["enc.b"] = Tensor(np.zeros(d), name="enc.b")
        for n in ("self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v", "cross.o"):
            w(f"{n}.W", (d, d), d)
        w("dec.W", (d, d), d)
        p["dec.b"] = Tensor(np.zeros(1), name="dec.b")
        for ln in ("enc.ln", "ln1", "ln2"):
            p[f"{ln}.g"] = Tensor(np.ones(d), name=f"{ln}.g")
            p[f"{ln}.b"] = Tensor(np.zeros(d), name=f"{ln}.b")
        return cls(cfg, p)

    def attach_moga(self, rng: np.random.Generator, rank: int | None = None,
                    conditioning: str | None = None, sampler: str | None = None) -> None:
        """Add fresh adapters (b = 0) and gate nets to the four adapted projections."""
        if rank is not None:
            self.cfg.rank = rank
        if conditioning is not None:
            self.cfg.conditioning = conditioning
        if sampler is not None:
            self.cfg.gumbel_sampler = sampler
        self.moga = {
            n: make_projection(self.params[f"{n}.W"], self.cfg.rank, self.cfg.dim, rng,
                               conditioning=self.cfg.conditioning, sampler=self.cfg.gumbel_sampler,
                               name=f"moga.{n}")
            for n in ADAPTED
        }

    def copy_base(self) -> "StreamSegModel":
        """Deep copy of the configuration and base parameters, without MoGA."""
        cfg = ModelConfig(**vars(self.cfg))
        return StreamSegModel(cfg, {k: Tensor(t.data.copy(), name=k) for k, t in self.params.items()})

    # ------------------------------------------------------------ parameter groups

    def base_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k not in LN_PARAMS}

    def layernorm_parameters(self) -> dict[str, Tensor]:
        return {k: self.params[k] for k in LN_PARAMS}

    def moga_parameters(self) -> dict[str, Tensor]:
        out = {}
        for proj in self.moga.values():
            for t in proj.parameters():
                out[t.name] = t
        return out

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out.update(self.moga_parameters())
        return out

    def set_trainable(self, names) -> list[Tensor]:
        names = set(names)
        tensors = self.named_tensors()
        unknown = names - set(tensors)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        for k, t in tensors.items():
            t.requires_grad = k in names
            t.grad = None
        return [tensors[k] for k in sorted(names)]

    # ------------------------------------------------------------ blocks

    def encode_frame(self, frame: np.ndarray) -> Tensor:
        S = self.cfg.image_size
        if frame.shape != (S, S, 3):
            raise ShapeError(f"frame of shape {frame.shape}, model expects {(S, S, 3)}")
        x = Tensor(patchify(np.asarray(frame, dtype=np.float64), self.cfg.patch))
        p = self.params
        h = F.linear(x, p["enc.W"], p["enc.b"])
        return F.layer_norm(h, p["enc.ln.g"], p["enc.ln.b"], self.cfg.ln_eps)

    def _project(self, name, x, pointers, mode, tau, rng) -> Tensor:
        if name in self.moga:
            return self.moga[name](x, pointers, mode, tau, rng)
        return F.linear(x, self.params[f"{name}.W"])

    def memory_attention(self, tokens: Tensor, bank: MemoryBank, mode: str = "inference",
                         tau: float | None = None, rng: np.random.Generator | None = None,
                         gate_log: dict | None = None) -> Tensor:
        mem = bank.memory_tokens()
        if not bank.pointers:
            raise EmptyMemoryError("no object pointers in memory bank")
        tau = self.cfg.tau if tau is None else tau
        p, eps = self.params, self.cfg.ln_eps
        ptrs = bank.pointers

        x = tokens + self._pos
        q = self._project("self.q", x, ptrs, mode, tau, rng)
        k = self._project("self.k", x, ptrs, mode, tau, rng)
        v = self._project("self.v", x, ptrs, mode, tau, rng)
        a = F.softmax_attention(q, k, v)
        x = F.layer_norm(x + F.linear(a, p["self.o.W"]), p["ln1.g"], p["ln1.b"], eps)

        qc = self._project("cross.q", x, ptrs, mode, tau, rng)
        mem_t = Tensor(mem)
        kc = F.linear(mem_t, p["cross.k.W"])
        vc = F.linear(mem_t, p["cross.v.W"])
        c = F.softmax_attention(qc, kc, vc)
        x = F.layer_norm(x + F.linear(c, p["cross.o.W"]), p["ln2.g"], p["ln2.b"], eps)

        if gate_log is not None:
            for n, proj in self.moga.items():
                gate_log[n] = np.stack([dec.hard for dec in proj.last])
        return x

    def decode_masks(self, fused: Tensor, bank: MemoryBank) -> list[Tensor]:
        """Per-object (H, W) logits from a pointer-queried dot-product head."""
        p, g = self.params, self.cfg.grid
        scale = 1.0 / np.sqrt(self.cfg.dim)
        up = self._up
        out = []
        for m in bank.pointers:
            query = F.matmul(p["dec.W"], Tensor(m)) * scale       # (d,)
            s = F.matmul(fused, query) + p["dec.b"]               # (N,)
            grid = F.reshape(s, (g, g))
            out.append(F.matmul(F.matmul(up, grid), up.T))
        return out

    # ------------------------------------------------------------ memory

    def _memory_entry(self, tokens: np.ndarray, masks, pointers) -> np.ndarray:
        entry = tokens.copy()
        for mk, m in zip(masks, pointers):
            entry += downsample_mask(mk, self.cfg.patch)[:, None] * m[None, :]
        return entry

    def bootstrap_first_frame(self, frame: np.ndarray, prompt_masks) -> MemoryBank:
        prompt_masks = [np.asarray(mk, dtype=bool) for mk in prompt_masks]
        O = len(prompt_masks)
        if not 1 <= O <= self.cfg.max_objects:
            raise ValueError(f"{O} prompted objects; supported range is 1..{self.cfg.max_objects}")
        S = self.cfg.image_size
        tokens = self.encode_frame(frame).data
        pointers = []
        for i, mk in enumerate(prompt_masks):
            if mk.shape != (S, S):
                raise ShapeError(f"prompt mask {i} has shape {mk.shape}")
            m = pool_tokens(tokens, mk, self.cfg.patch)
            if m is None:
                raise DegeneratePromptError(f"prompt mask for object {i} has no pixels")
            pointers.append(m)
        bank = MemoryBank(self.cfg.mem_capacity, pointers=pointers, frame_count=1)
        bank.push(0, self._memory_entry(tokens + self._pos, prompt_masks, pointers))
        return bank

    def update_memory(self, bank: MemoryBank, fused: np.ndarray, masks, encoded: np.ndarray,
                      lam: float | None = None) -> MemoryBank:
        """Append the frame to the ring buffer and EMA-update pointers (in place).

        Pointers pool the frame's encoder tokens, the same space the bootstrap
        pointers live in, so a constant input is an exact EMA fixed point.
        """
        lam = self.cfg.pointer_ema if lam is None else lam
        if len(masks) != bank.O:
            raise ValueError(f"{len(masks)} masks for {bank.O} pointers")
        new_ptrs = []
        for m, mk in zip(bank.pointers, masks):
            pooled = pool_tokens(encoded, mk, self.cfg.patch)
            new_ptrs.append(m if pooled is None else (1.0 - lam) * m + lam * pooled)
        bank.pointers = new_ptrs
        bank.push(bank.frame_count, self._memory_entry(fused, masks, new_ptrs))
        bank.frame_count += 1
        return bank

    # ------------------------------------------------------------ streaming

    def step(self, frame: np.ndarray, bank: MemoryBank, mode: str = "inference", tau=None, rng=None,
             gate_log: dict | None = None):
        """One streaming step; returns (per-object logits, fused tokens, encoder tokens).

        Does not touch memory.
        """
        tokens = self.encode_frame(frame)
        fused = self.memory_attention(tokens, bank, mode, tau, rng, gate_log)
        return self.decode_masks(fused, bank), fused, tokens

    def process_clip(self, frames: np.ndarray, prompt_masks, mode: str = "inference", tau=None,
                     rng=None) -> Prediction:
        frames = np.asarray(frames)
        T = frames.shape[0]
        S = self.cfg.image_size
        prompts = np.asarray(prompt_masks, dtype=bool)
        O = prompts.shape[0]
        logits = np.zeros((O, T, S, S))
        logits[:, 0] = np.where(prompts, 1.0, -1.0)
        masks = np.zeros((O, T, S, S), dtype=bool)
        masks[:, 0] = prompts
        bank = self.bootstrap_first_frame(frames[0], prompts)
        pred = Prediction(logits, masks, gates=[{}], pointers=[np.stack(bank.pointers)])
        for t in range(1, T):
            log: dict = {}
            outs, fused, tokens = self.step(frames[t], bank, mode, tau, rng, log)
            for o, lo in enumerate(outs):
                logits[o, t] = lo.data
                masks[o, t] = lo.data > 0
            self.update_memory(bank, fused.data, masks[:, t], tokens.data)
            pred.gates.append(log)
            pred.pointers.append(np.stack(bank.pointers))
        return pred

    def clip_loss(self, frames: np.ndarray, gt_masks: np.ndarray, mode: str = "train", tau=None,
                  rng=None, gamma: float = 2.0, alpha: float = 0.25, smooth: float = 1.0,
                  teacher_forcing: bool = False) -> Tensor:
        """Mean over frames t >= 1 and objects of focal + dice on mask logits.

        Memory and pointers are carried forward as constants, so gradients stay
        within a frame. With ``teacher_forcing`` the memory is updated from the
        ground-truth masks instead of the model's own predictions.
        """
        gt_masks = np.asarray(gt_masks, dtype=bool)   # (O, T, H, W)
        O, T = gt_masks.shape[:2]
        if T < 2:
            raise ValueError("clip_loss needs at least two frames")
        bank = self.bootstrap_first_frame(frames[0], gt_masks[:, 0])
        total = None
        for t in range(1, T):
            outs, fused, tokens = self.step(frames[t], bank, mode, tau, rng)
            for o, lo in enumerate(outs):
                y = gt_masks[o, t].astype(np.float64)
                term = F.focal_loss(lo, y, gamma, alpha) + F.dice_loss(F.sigmoid(lo), y, smooth)
                total = term if total is None else total + term
            pred = gt_masks[:, t] if teacher_forcing else np.stack([lo.data > 0 for lo in outs])
            self.update_memory(bank, fused.data, pred, tokens.data)
        return total * (1.0 / ((T - 1) * O))
