"""Region similarity J, boundary F-measure F and their mean J&F."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .numkit import ShapeError


def _check(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def region_similarity(pred, gt) -> float:
    """IoU; two empty masks score 1."""
    pred, gt = _check(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


_FOUR = ndimage.generate_binary_structure(2, 1)


def mask_boundary(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background or on the image edge."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_FOUR, border_value=0)
    return mask & ~interior


def disc(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return yy * yy + xx * xx <= radius * radius


def default_tolerance(shape) -> int:
    return int(math.ceil(0.008 * math.hypot(*shape[:2])))


def boundary_fmeasure(pred, gt, tol_px: float | None = None) -> float:
    pred, gt = _check(pred, gt)
    if tol_px is None:
        tol_px = default_tolerance(pred.shape)
    if tol_px < 0:
        raise ValueError("tol_px must be non-negative")
    if not pred.any() and not gt.any():
        return 1.0
    bp, bg = mask_boundary(pred), mask_boundary(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 or ng == 0:
        return 0.0
    se = disc(tol_px)
    gt_zone = ndimage.binary_dilation(bg, structure=se)
    pred_zone = ndimage.binary_dilation(bp, structure=se)
    precision = (bp & gt_zone).sum() / np_
    recall = (bg & pred_zone).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass
class ObjectScore:
    clip_id: str
    object_id: int
    J: float
    F: float
    frames: list[int]
    J_trace: list[float]
    F_trace: list[float]


@dataclass
class MetricsReport:
    objects: list[ObjectScore] = field(default_factory=list)
    dataset: str = ""
    note: str = "prompt frame (t=0) excluded from scoring"

    @property
    def J(self) -> float:
        return float(np.mean([o.J for o in self.objects])) if self.objects else float("nan")

    @property
    def F(self) -> float:
        return float(np.mean([o.F for o in self.objects])) if self.objects else float("nan")

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2.0

    def per_frame_jf(self) -> dict[int, float]:
        """Frame index -> mean J&F over objects present at that frame."""
        acc: dict[int, list[float]] = {}
        for o in self.objects:
            for t, j, f in zip(o.frames, o.J_trace, o.F_trace):
                acc.setdefault(t, []).append((j + f) / 2)
        return {t: float(np.mean(v)) for t, v in sorted(acc.items())}

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.note}\n")
            w = csv.writer(fh)
            w.writerow(["dataset", "clip_id", "object_id", "J", "F"])
            for o in self.objects:
                w.writerow([self.dataset, o.clip_id, o.object_id, repr(o.J), repr(o.F)])
            w.writerow([self.dataset, "ALL", "ALL", repr(self.J), repr(self.F)])
            w.writerow([self.dataset, "J&F", "", repr(self.JF), ""])

    def write_traces(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip_id", "object_id", "frame", "J", "F"])
            for o in self.objects:
                for t, j, f in zip(o.frames, o.J_trace, o.F_trace):
                    w.writerow([o.clip_id, o.object_id, t, repr(j), repr(f)])


class MissingPredictionError(KeyError):
    pass


def evaluate_dataset(predictions: dict, ground_truths: dict, annotated_frames: dict | None = None,
                     tol_px: float | None = None, dataset: str = "",
                     exclude_prompt_frame: bool = True) -> MetricsReport:
    """Score every annotated (clip, object, frame).

    ``predictions`` and ``ground_truths`` map clip id -> {object id -> (T, H, W) bool};
    ``annotated_frames`` optionally maps clip id -> frame indices (default: all).
    Objects are averaged over frames first, then over objects.
    """
    gaps = []
    for cid, objs in ground_truths.items():
        if cid not in predictions:
            gaps.append(f"{cid}: all objects")
            continue
        for oid, gt in objs.items():
            if oid not in predictions[cid]:
                gaps.append(f"{cid}/object {oid}")
            elif len(predictions[cid][oid]) < len(gt):
                gaps.append(f"{cid}/object {oid}: {len(predictions[cid][oid])} of {len(gt)} frames")
    if gaps:
        raise MissingPredictionError("missing predictions: " + "; ".join(gaps))

    report = MetricsReport(dataset=dataset)
    if not exclude_prompt_frame:
        report.note = "prompt frame (t=0) included in scoring"
    for cid in sorted(ground_truths):
        for oid in sorted(ground_truths[cid]):
            gt = np.asarray(ground_truths[cid][oid], dtype=bool)
            pr = np.asarray(predictions[cid][oid], dtype=bool)
            frames = list(annotated_frames[cid]) if annotated_frames and cid in annotated_frames else list(range(len(gt)))
            if exclude_prompt_frame:
                frames = [t for t in frames if t != 0]
            if not frames:
                continue
            js = [region_similarity(pr[t], gt[t]) for t in frames]
            fs = [boundary_fmeasure(pr[t], gt[t], tol_px) for t in frames]
            report.objects.append(ObjectScore(cid, int(oid), float(np.mean(js)), float(np.mean(fs)),
                                              frames, js, fs))
    return report
