"""Two-phase training: full pre-training of the toy model, then MoGA + LayerNorm."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Clip
from .moga import temperature_at
from .numkit import AdamW, NumericError, Tape
from .streammem import LN_PARAMS, StreamSegModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 300
    lr: float = 1e-3
    lr_schedule: str = "constant"      # or "cosine" (decays to lr_floor * lr)
    lr_floor: float = 0.05
    teacher_forcing: bool = False
    # optional warm-up stage on frame pairs (prompt + one frame); pre-training only
    pair_steps: int = 0
    pair_batch_size: int = 8
    pair_lr: float = 3e-3
    weight_decay: float = 0.1
    batch_size: int = 4
    frames: int = 8
    seed: int = 0
    tau_start: float = 1.0
    tau_target: float = 0.3
    anneal_frac: float = 0.5
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_smooth: float = 1.0
    log_every: int = 25


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    if cfg.lr_schedule == "cosine":
        frac = step / max(1, cfg.steps - 1)
        return cfg.lr * (cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + math.cos(math.pi * frac)))
    raise ValueError(f"unknown lr schedule {cfg.lr_schedule!r}")


def pretrain_parameter_names(model: StreamSegModel) -> list[str]:
    return sorted(model.params)


def moga_parameter_names(model: StreamSegModel) -> list[str]:
    """Adapters, gate nets and LayerNorms; everything else stays frozen."""
    if not model.moga:
        raise ValueError("model has no MoGA projections attached")
    return sorted(list(model.moga_parameters()) + list(LN_PARAMS))


def train(model: StreamSegModel, clips: list[Clip], cfg: TrainConfig, names: list[str],
          use_tau: bool = True) -> list[float]:
    """AdamW over ``names``; returns the per-step loss trajectory."""
    if not clips:
        raise ValueError("empty training set")
    params = model.set_trainable(names)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    gt = [c.object_masks()[:, : cfg.frames] for c in clips]
    losses = []
    for step in range(cfg.steps):
        tau = temperature_at(step, cfg.steps, cfg.tau_target, cfg.tau_start, cfg.anneal_frac)
        batch = rng.choice(len(clips), size=min(cfg.batch_size, len(clips)), replace=False)
        opt.set_lr(lr_at(step, cfg))
        opt.zero_grad()
        with Tape() as tape:
            total = None
            for i in batch:
                loss = model.clip_loss(clips[i].frames[: cfg.frames], gt[i], "train",
                                       tau if use_tau else None, rng,
                                       cfg.focal_gamma, cfg.focal_alpha, cfg.dice_smooth,
                                       cfg.teacher_forcing)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            total.name = f"loss@step{step}"
        value = float(total.data)
        if not np.isfinite(value):
            raise NumericError(total.name, f"loss {value}")
        tape.backward(total)
        opt.step()
        losses.append(value)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.info("step %d/%d loss %.4f%s", step, cfg.steps, value, f" tau {tau:.3f}" if use_tau else "")
    model.set_trainable([])
    return losses


def pretrain(model: StreamSegModel, clips: list[Clip], cfg: TrainConfig) -> list[float]:
    """Phase 1: every parameter trainable.

    With ``pair_steps`` > 0 a cheap first stage trains on (prompt, next frame)
    pairs only, which teaches single-step segmentation about seven times
    faster per step; the main stage then trains on full clips.
    """
    names = pretrain_parameter_names(model)
    losses: list[float] = []
    if cfg.pair_steps > 0:
        pair = dataclasses.replace(cfg, steps=cfg.pair_steps, frames=2, batch_size=cfg.pair_batch_size,
                                   lr=cfg.pair_lr, lr_schedule="cosine", pair_steps=0)
        losses += train(model, clips, pair, names, use_tau=False)
        cfg = dataclasses.replace(cfg, seed=cfg.seed + 1)
    losses += train(model, clips, cfg, names, use_tau=False)
    return losses
