"""Eight synthetic corruptions with smoothly varying per-frame severity.

Per-clip randomness (jitter directions, blur angle, fog map, streak angle,
snow drift) is drawn from ``(seed, kind)``; per-frame randomness from
``(seed, kind, t)``. A frame's output therefore depends only on
(frame, kind, severity, seed, t), never on processing order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .data import Clip, clip_seed
from .streammem import bilinear_matrix

KINDS = (
    "color_jitter",
    "gaussian_noise",
    "iso_noise",
    "motion_blur",
    "resampling_blur",
    "fog",
    "rain",
    "snow",
)

SCHEDULE_FORMULA = "s_t = clip(base + sum_k A_k*sin(2*pi*f_k*t/T + phi_k), 0, 1)  [artifact-defined]"

MOTION_BLUR_MAX = 15


# ---------------------------------------------------------------- schedule

@dataclass
class TemporalSchedule:
    T: int
    base: float
    components: list[tuple[float, float, float]] = field(default_factory=list)  # (f, A, phi)
    seed: int = 0

    @classmethod
    def sample(cls, T: int, seed: int, n_components: int = 3, freqs=(1, 2, 3),
               max_amp: float = 0.15, base_range=(0.3, 0.7)) -> "TemporalSchedule":
        rng = np.random.default_rng([seed, 7919])
        base = float(rng.uniform(*base_range))
        comps = []
        for k in range(n_components):
            comps.append((float(freqs[k % len(freqs)]), float(rng.uniform(0, max_amp)),
                          float(rng.uniform(0, 2 * np.pi))))
        return cls(T, base, comps, seed)

    def lipschitz_bound(self) -> float:
        return sum(abs(A) * 2 * np.pi * f / self.T for f, A, _ in self.components)


def severity_schedule(sched: TemporalSchedule) -> np.ndarray:
    if sched.T < 1:
        raise ValueError("schedule needs T >= 1")
    t = np.arange(sched.T)
    s = np.full(sched.T, float(sched.base))
    for f, A, phi in sched.components:
        s = s + A * np.sin(2 * np.pi * f * t / sched.T + phi)
    return np.clip(s, 0.0, 1.0)


# ---------------------------------------------------------------- helpers

def _clip_rng(seed: int, kind: str) -> np.random.Generator:
    return np.random.default_rng([seed, KINDS.index(kind), 0])


def _frame_rng(seed: int, kind: str, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, KINDS.index(kind), 1, t])


def _luma(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def _resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    Mh, Mw = bilinear_matrix(img.shape[0], h), bilinear_matrix(img.shape[1], w)
    return np.einsum("ij,jkc,lk->ilc", Mh, img, Mw, optimize=True)


def _splat(layer: np.ndarray, ys: np.ndarray, xs: np.ndarray, w: np.ndarray) -> None:
    """Bilinear splat of weights ``w`` at float positions (anti-aliased points)."""
    H, W = layer.shape
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = (y0 + dy) % H, (x0 + dx) % W
            np.add.at(layer, (yy, xx), w * wy * wx)


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized anti-aliased line kernel spanning ``length`` pixels at ``angle``.

    Dense samples along the centred segment are bilinearly splatted, so the
    kernel is symmetric about the origin and introduces no shift.
    """
    length = max(1, int(length))
    if length == 1:
        return np.ones((1, 1))
    half = (length - 1) / 2.0
    offs = np.linspace(-half, half, 8 * length + 1)
    xs, ys = offs * math.cos(angle), offs * math.sin(angle)
    r = int(math.ceil(half)) + 1
    k = np.zeros((2 * r + 1, 2 * r + 1))
    _splat(k, ys + r, xs + r, np.full(offs.shape, 1.0 / offs.size))
    return k


# ---------------------------------------------------------------- kinds

def _color_jitter(img, s, seed, t):
    r = _clip_rng(seed, "color_jitter")
    sb, sc, ss = r.choice([-1.0, 1.0], size=3)
    out = img + sb * 0.3 * s
    mean = out.mean()
    out = (out - mean) * (1 + sc * 0.4 * s) + mean
    gray = _luma(out)[..., None]
    return (out - gray) * (1 + ss * 0.5 * s) + gray


def _gaussian_noise(img, s, seed, t):
    r = _frame_rng(seed, "gaussian_noise", t)
    return img + r.normal(0.0, 0.2 * s, size=img.shape)


def _iso_noise(img, s, seed, t):
    r = _frame_rng(seed, "iso_noise", t)
    var = 0.1 * s * _luma(img)[..., None] + (0.05 * s) ** 2
    return img + np.sqrt(var) * r.normal(size=img.shape)


def _motion_blur(img, s, seed, t):
    angle = _clip_rng(seed, "motion_blur").uniform(0, np.pi)
    k = motion_kernel(1 + round((MOTION_BLUR_MAX - 1) * s), angle)
    return np.stack([ndimage.convolve(img[..., c], k, mode="nearest") for c in range(3)], axis=-1)


def _resampling_blur(img, s, seed, t):
    H, W = img.shape[:2]
    f = max(0.25, 1 - 0.75 * s)
    h, w = max(1, int(round(H * f))), max(1, int(round(W * f)))
    return _resize(_resize(img, h, w), H, W)


def _fog(img, s, seed, t):
    H, W = img.shape[:2]
    r = _clip_rng(seed, "fog")
    coarse = r.uniform(0, 1, size=(4, 4, 1))
    smooth = _resize(coarse, H, W)[..., 0]
    f = (0.7 * s) * (0.5 + 0.5 * smooth)[..., None]
    return (1 - f) * img + f * 0.9


def _rain(img, s, seed, t):
    H, W = img.shape[:2]
    n = int(math.floor(400 * s))
    out = img + 0.05 * s
    if n == 0:
        return out
    r = _clip_rng(seed, "rain")
    angle = np.pi / 2 + r.uniform(-0.4, 0.4)
    starts = r.uniform(0, 1, size=(400, 2)) * [H, W]
    speed = r.uniform(3.0, 6.0)
    d = np.array([math.sin(angle), math.cos(angle)])
    pos = (starts[:n] + t * speed * d) % [H, W]
    length = 5
    steps = np.linspace(0, length, 4 * length)
    ys = (pos[:, :1] + steps[None, :] * d[0]).ravel()
    xs = (pos[:, 1:] + steps[None, :] * d[1]).ravel()
    layer = np.zeros((H, W))
    _splat(layer, ys, xs, np.full(ys.shape, 0.08))
    return out + np.minimum(layer, 0.6)[..., None]


def _snow(img, s, seed, t):
    H, W = img.shape[:2]
    n = int(math.floor(300 * s))
    gray = _luma(img)[..., None]
    out = gray + (img - gray) * (1 - 0.3 * s)
    if n == 0:
        return out
    r = _clip_rng(seed, "snow")
    starts = r.uniform(0, 1, size=(300, 2)) * [H, W]
    sizes = r.uniform(0.5, 1.2, size=300)
    drift = np.array([r.uniform(1.0, 3.0), r.uniform(-1.5, 1.5)])
    pos = (starts[:n] + t * drift) % [H, W]
    sig = sizes[:n, None]
    # isotropic Gaussians are separable: layer = sum_n gy_n(y) gx_n(x)
    dy = np.abs(np.arange(H)[None, :] + 0.5 - pos[:, :1])
    dx = np.abs(np.arange(W)[None, :] + 0.5 - pos[:, 1:])
    dy = np.minimum(dy, H - dy)
    dx = np.minimum(dx, W - dx)
    gy = np.exp(-dy * dy / (2 * sig * sig))
    gx = np.exp(-dx * dx / (2 * sig * sig))
    layer = gy.T @ gx
    return out + 0.8 * np.minimum(layer, 1.0)[..., None]


_TRANSFORMS = {
    "color_jitter": _color_jitter,
    "gaussian_noise": _gaussian_noise,
    "iso_noise": _iso_noise,
    "motion_blur": _motion_blur,
    "resampling_blur": _resampling_blur,
    "fog": _fog,
    "rain": _rain,
    "snow": _snow,
}


def apply_corruption(frame: np.ndarray, kind: str, severity: float, seed: int = 0, t: int = 0) -> np.ndarray:
    """Corrupt one (H, W, 3) frame in [0, 1]; severity 0 returns an exact copy."""
    if kind not in _TRANSFORMS:
        raise ValueError(f"unknown corruption kind {kind!r}; expected one of {KINDS}")
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity {severity} outside [0, 1]")
    frame = np.asarray(frame, dtype=np.float64)
    if severity == 0:
        return frame.copy()
    return np.clip(_TRANSFORMS[kind](frame, float(severity), int(seed), int(t)), 0.0, 1.0)


def corrupt_clip(clip: Clip, kind: str, sched: TemporalSchedule, quantize: bool = True) -> Clip:
    """Corrupt every frame at its scheduled severity; masks are passed through untouched."""
    if sched.T != clip.T:
        raise ValueError(f"schedule length {sched.T} != clip length {clip.T}")
    sev = severity_schedule(sched)
    frames = np.stack([apply_corruption(clip.frames[t], kind, sev[t], sched.seed, t) for t in range(clip.T)])
    if quantize:
        frames = np.round(frames * 255.0) / 255.0
    meta = dict(clip.meta)
    meta.update(corruption_manifest(kind, sched))
    return Clip(frames, clip.masks.copy(), list(clip.object_ids), clip.clip_id, meta)


def corruption_manifest(kind: str, sched: TemporalSchedule) -> dict[str, str]:
    sev = severity_schedule(sched)
    return {
        "corruption.kind": kind,
        "corruption.seed": str(sched.seed),
        "corruption.T": str(sched.T),
        "corruption.base": repr(sched.base),
        "corruption.components": ";".join(f"{f!r},{A!r},{p!r}" for f, A, p in sched.components),
        "corruption.severities": ",".join(f"{v:.6f}" for v in sev),
        "corruption.schedule_formula": SCHEDULE_FORMULA,
    }


def corrupt_dataset(clips: list[Clip], kind: str, seed: int) -> list[Clip]:
    """``kind='all'`` assigns the eight kinds round-robin over clips."""
    out = []
    for i, clip in enumerate(clips):
        k = KINDS[i % len(KINDS)] if kind == "all" else kind
        sched = TemporalSchedule.sample(clip.T, clip_seed(seed, i))
        out.append(corrupt_clip(clip, k, sched))
    return out
