"""Glue between the model, datasets and metrics."""

from __future__ import annotations

import numpy as np

from .data import Clip
from .streammem import ADAPTED, Prediction, StreamSegModel
from .vosmetrics import MetricsReport, evaluate_dataset


def predict_dataset(model: StreamSegModel, clips: list[Clip]) -> dict[str, Prediction]:
    return {c.clip_id: model.process_clip(c.frames, c.prompts(), "inference") for c in clips}


def evaluate_model(model: StreamSegModel, clips: list[Clip], dataset: str = "",
                   predictions: dict[str, Prediction] | None = None, tol_px: float | None = None,
                   exclude_prompt_frame: bool = True) -> MetricsReport:
    preds = predictions if predictions is not None else predict_dataset(model, clips)
    pr, gt = {}, {}
    for c in clips:
        om = c.object_masks()
        gt[c.clip_id] = {oid: om[i] for i, oid in enumerate(c.object_ids)}
        pr[c.clip_id] = {oid: preds[c.clip_id].masks[i] for i, oid in enumerate(c.object_ids)}
    return evaluate_dataset(pr, gt, tol_px=tol_px, dataset=dataset,
                            exclude_prompt_frame=exclude_prompt_frame)


def gate_matrix(model: StreamSegModel, pred: Prediction) -> np.ndarray:
    """Inference gates as a (O, T, P, R) bit array, P = adapted projections.

    Frame t >= 1 uses the gates actually applied in that step. Frame 0 has
    no gated step; its row holds the gates of the bootstrap pointers, i.e.
    what the gate nets select before any frame has been tracked.
    """
    if not model.moga:
        raise ValueError("model has no MoGA projections")
    O, T = pred.masks.shape[:2]
    R = model.cfg.rank
    out = np.zeros((O, T, len(ADAPTED), R), dtype=np.uint8)
    tau = model.cfg.tau
    for p, name in enumerate(ADAPTED):
        proj = model.moga[name]
        z0 = proj.gates(list(pred.pointers[0]), "inference", tau)
        for o in range(O):
            out[o, 0, p] = z0[o].data
        for t in range(1, T):
            out[:, t, p] = pred.gates[t][name]
    return out


def gate_hamming(gates: np.ndarray) -> np.ndarray:
    """Per-object Hamming distance between consecutive frames, shape (O, T - 1)."""
    flat = gates.reshape(gates.shape[0], gates.shape[1], -1).astype(int)
    return np.abs(np.diff(flat, axis=1)).sum(-1)
