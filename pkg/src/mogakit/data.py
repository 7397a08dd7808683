"""Synthetic moving-shape clips and the on-disk clip directory format.

Layout per clip::

    clip_00000/
        frames/00000.png   8-bit RGB
        masks/00000.png    8-bit, pixel value = object id, 0 = background
        clip.meta          key = value text
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SHAPE_KINDS = ("disc", "rectangle", "triangle")


class DataError(RuntimeError):
    pass


@dataclass
class ToyDatasetSpec:
    clips: int = 200
    frames: int = 8
    size: int = 64
    min_objects: int = 1
    max_objects: int = 3
    shapes: tuple[str, ...] = SHAPE_KINDS
    min_radius: float = 7.0
    max_radius: float = 12.0
    max_speed: float = 2.0
    seed: int = 0


@dataclass
class Clip:
    frames: np.ndarray          # (T, H, W, 3) in [0, 1]
    masks: np.ndarray           # (T, H, W) uint8 object ids
    object_ids: list[int]
    clip_id: str = "clip"
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def O(self) -> int:
        return len(self.object_ids)

    def object_masks(self) -> np.ndarray:
        """(O, T, H, W) boolean masks in object-id order."""
        return np.stack([self.masks == o for o in self.object_ids])

    def prompts(self) -> np.ndarray:
        return self.object_masks()[:, 0]


def clip_seed(master: int, index: int) -> int:
    """Per-clip seed; independent of processing order."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


# ---------------------------------------------------------------- geometry

@dataclass
class ShapeTrack:
    kind: str
    extent: float                 # half-size; bounces keep center within [extent, size - extent]
    params: np.ndarray            # disc: (r,); rectangle: (hw, hh); triangle: 3x2 vertex offsets
    color: np.ndarray
    centers: np.ndarray           # (T, 2) as (x, y)


def _bounce(c0: np.ndarray, v: np.ndarray, lo: float, hi: float, T: int) -> np.ndarray:
    out = np.empty((T, 2))
    c, v = c0.copy(), v.copy()
    for t in range(T):
        out[t] = c
        nxt = c + v
        for ax in range(2):
            if nxt[ax] < lo or nxt[ax] > hi:
                v[ax] = -v[ax]
        c = np.clip(c + v, lo, hi)
    return out


def clip_geometry(spec: ToyDatasetSpec, seed: int, min_visible: int = 20):
    """Background colors/direction and the per-object tracks for one clip.

    Layouts where some object is (nearly) hidden on frame 0 are redrawn, so
    every object has a usable first-frame prompt.
    """
    rng = np.random.default_rng(seed)
    while True:
        bg, angle, tracks = _draw_geometry(spec, rng)
        visible = np.zeros((spec.size, spec.size), dtype=int)
        for o, tr in enumerate(tracks, start=1):
            visible[shape_region(tr, 0, spec.size)] = o
        if all(np.sum(visible == o) >= min_visible for o in range(1, len(tracks) + 1)):
            return bg, angle, tracks


def _draw_geometry(spec: ToyDatasetSpec, rng: np.random.Generator):
    O = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    bg = rng.uniform(0.0, 1.0, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    tracks = []
    for _ in range(O):
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        r = rng.uniform(spec.min_radius, spec.max_radius)
        if kind == "disc":
            params, extent = np.array([r]), r
        elif kind == "rectangle":
            params = np.array([r, rng.uniform(0.6, 1.0) * r])
            extent = float(params.max())
        else:
            ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
            ang += rng.uniform(-0.3, 0.3, size=3)
            params = r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            extent = r
        # keep objects distinguishable from the background midpoint
        while True:
            color = rng.uniform(0.0, 1.0, size=3)
            if np.abs(color - bg.mean(axis=0)).max() > 0.35:
                break
        lo, hi = extent + 1.0, spec.size - extent - 1.0
        c0 = rng.uniform(lo, hi, size=2)
        v = rng.uniform(-spec.max_speed, spec.max_speed, size=2)
        tracks.append(ShapeTrack(kind, extent, params, color, _bounce(c0, v, lo, hi, spec.frames)))
    return bg, angle, tracks


def shape_region(track: ShapeTrack, t: int, size: int) -> np.ndarray:
    """Boolean (H, W) region of a shape at frame t, sampled at pixel centers."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = track.centers[t]
    dx, dy = xs - cx, ys - cy
    if track.kind == "disc":
        return dx * dx + dy * dy <= track.params[0] ** 2
    if track.kind == "rectangle":
        return (np.abs(dx) <= track.params[0]) & (np.abs(dy) <= track.params[1])
    v = track.params
    inside = np.ones_like(dx, dtype=bool)
    # same side of each edge as the opposite vertex
    for i in range(3):
        a, b, c = v[i], v[(i + 1) % 3], v[(i + 2) % 3]
        ex, ey = b - a
        side = ex * (dy - a[1]) - ey * (dx - a[0])
        ref = ex * (c[1] - a[1]) - ey * (c[0] - a[0])
        inside &= side * ref >= 0
    return inside


def render_clip(spec: ToyDatasetSpec, seed: int, clip_id: str = "clip") -> Clip:
    bg, angle, tracks = clip_geometry(spec, seed)
    S = spec.size
    ys, xs = np.mgrid[0:S, 0:S] + 0.5
    ramp = ((xs - S / 2) * np.cos(angle) + (ys - S / 2) * np.sin(angle)) / S + 0.5
    ramp = np.clip(ramp, 0.0, 1.0)[..., None]
    background = (1 - ramp) * bg[0] + ramp * bg[1]

    frames = np.empty((spec.frames, S, S, 3))
    masks = np.zeros((spec.frames, S, S), dtype=np.uint8)
    for t in range(spec.frames):
        img = background.copy()
        for o, tr in enumerate(tracks, start=1):
            region = shape_region(tr, t, S)
            img[region] = tr.color
            masks[t][region] = o
        frames[t] = img
    # 8-bit quantization so in-memory clips equal their PNG round trip
    frames = np.round(frames * 255.0) / 255.0
    meta = {"T": str(spec.frames), "O": str(len(tracks)), "seed": str(seed),
            "height": str(S), "width": str(S)}
    return Clip(frames, masks, list(range(1, len(tracks) + 1)), clip_id, meta)


def generate_dataset(spec: ToyDatasetSpec) -> list[Clip]:
    return [render_clip(spec, clip_seed(spec.seed, i), f"clip_{i:05d}") for i in range(spec.clips)]


# ---------------------------------------------------------------- disk format

def write_meta(path: Path, meta: dict[str, str]) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))


def read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    return meta


def _to_u8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)


def prepare_out_dir(out: Path, force: bool) -> None:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DataError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def write_clip(root: Path, clip: Clip, write_masks: bool = True) -> Path:
    d = Path(root) / clip.clip_id
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for t in range(clip.T):
        Image.fromarray(_to_u8(clip.frames[t]), mode="RGB").save(d / "frames" / f"{t:05d}.png")
    if write_masks:
        (d / "masks").mkdir(exist_ok=True)
        for t in range(clip.T):
            Image.fromarray(clip.masks[t], mode="L").save(d / "masks" / f"{t:05d}.png")
    write_meta(d / "clip.meta", clip.meta)
    return d


def write_dataset(root: Path, clips: list[Clip], force: bool = False) -> None:
    prepare_out_dir(root, force)
    for clip in clips:
        write_clip(root, clip)


def read_clip(d: Path) -> Clip:
    d = Path(d)
    if not (d / "clip.meta").exists():
        raise DataError(f"{d} has no clip.meta")
    meta = read_meta(d / "clip.meta")
    fpaths = sorted((d / "frames").glob("*.png"))
    mpaths = sorted((d / "masks").glob("*.png"))
    if not fpaths or len(fpaths) != len(mpaths):
        raise DataError(f"{d}: {len(fpaths)} frames vs {len(mpaths)} masks")
    frames = np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0 for p in fpaths])
    masks = np.stack([np.asarray(Image.open(p), dtype=np.uint8) for p in mpaths])
    if "O" in meta:
        ids = list(range(1, int(meta["O"]) + 1))
    else:
        ids = sorted(int(v) for v in np.unique(masks[0]) if v)
    return Clip(frames, masks, ids, d.name, meta)


def read_dataset(root: Path) -> list[Clip]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "clip.meta").exists()) if root.is_dir() else []
    if not dirs:
        raise DataError(f"no clips found under {root}")
    return [read_clip(p) for p in dirs]
