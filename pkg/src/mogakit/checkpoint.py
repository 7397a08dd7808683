"""Binary checkpoint container.

Layout (little-endian): ``b"MOGA1"``, a u64 byte length, a UTF-8 JSON
manifest ``{"meta": ..., "tensors": [{"name", "shape", "offset"}, ...]}``
with tensors sorted by name and offsets relative to the payload start,
then the raw float64 payloads back to back.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .streammem import ModelConfig, StreamSegModel

MAGIC = b"MOGA1"
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def _manifest_bytes(meta: dict, tensors: dict[str, np.ndarray]) -> tuple[bytes, list[bytes]]:
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":"))
    return manifest.encode("utf-8"), blobs


def write_tensors(path: Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    manifest, blobs = _manifest_bytes(meta or {}, tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def read_tensors(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a MOGA1 checkpoint")
    start = len(MAGIC) + _LEN.size
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(raw, len(MAGIC))
    try:
        manifest = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    payload = memoryview(raw)[start + n:]
    out = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f8").reshape(e["shape"])
        out[e["name"]] = arr.astype(np.float64)
    return out, manifest["meta"]


def save_model(path: Path, model: StreamSegModel, extra: dict | None = None) -> None:
    meta = {"model": asdict(model.cfg), "moga": bool(model.moga)}
    if extra:
        meta["extra"] = extra
    write_tensors(path, {k: t.data for k, t in model.named_tensors().items()}, meta)


def load_model(path: Path) -> tuple[StreamSegModel, dict]:
    tensors, meta = read_tensors(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: manifest carries no model config")
    cfg = ModelConfig(**meta["model"])
    model = StreamSegModel.init(cfg, np.random.default_rng(0))
    if meta.get("moga"):
        model.attach_moga(np.random.default_rng(0))
    expected = model.named_tensors()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        unexpected = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"{path}: tensor mismatch; missing {missing}, unexpected {unexpected}")
    for name, t in expected.items():
        if t.data.shape != tensors[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, expected {t.data.shape}")
        t.data[...] = tensors[name]
    return model, meta.get("extra", {})
