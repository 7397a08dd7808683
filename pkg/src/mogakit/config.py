"""Flat ``section.key = value`` run configuration.

Every section maps onto a dataclass of module defaults. A single master
``seed`` drives dataset generation, corruption, initialization and
training, so a run is reproducible from its written config alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import ToyDatasetSpec
from .streammem import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class CorruptConfig:
    kind: str = "all"
    base_severity_min: float = 0.3
    base_severity_max: float = 0.7
    max_amplitude: float = 0.15
    components: int = 3


@dataclass
class EvalConfig:
    tol_px: float | None = None
    exclude_prompt_frame: bool = True


def _moga_train_defaults() -> TrainConfig:
    return TrainConfig(steps=600, lr=5e-3, lr_schedule="cosine")


def _pretrain_defaults() -> TrainConfig:
    return TrainConfig(steps=1000, lr=1e-3, lr_schedule="cosine", pair_steps=3000, pair_lr=3e-3,
                       pair_batch_size=8)


@dataclass
class RunConfig:
    seed: int = 0
    data: ToyDatasetSpec = field(default_factory=ToyDatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    corrupt: CorruptConfig = field(default_factory=CorruptConfig)
    pretrain: TrainConfig = field(default_factory=_pretrain_defaults)
    train: TrainConfig = field(default_factory=_moga_train_defaults)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # fields owned by the master seed rather than by their section
    _SEEDED = {("data", "seed"), ("pretrain", "seed"), ("train", "seed")}
    # adapter settings live on ModelConfig but are addressed as moga.*
    _MOGA_KEYS = {"rank": "rank", "tau": "tau", "conditioning": "conditioning",
                  "gumbel_sampler": "gumbel_sampler"}

    def items(self) -> list[tuple[str, object]]:
        out = [("seed", self.seed)]
        for sec in ("data", "model", "corrupt", "pretrain", "train", "eval"):
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                if (sec, f.name) in self._SEEDED:
                    continue
                prefix = "moga" if sec == "model" and f.name in self._MOGA_KEYS else sec
                out.append((f"{prefix}.{f.name}", getattr(obj, f.name)))
        return sorted(out)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def set(self, key: str, raw: str) -> None:
        if key == "seed":
            self.seed = _parse(raw, self.seed, key)
            return
        sec, _, name = key.partition(".")
        if sec == "moga" and name in self._MOGA_KEYS:
            sec = "model"
        obj = getattr(self, sec, None) if sec in ("data", "model", "corrupt", "pretrain", "train", "eval") else None
        if obj is None or name not in {f.name for f in dataclasses.fields(obj)} or (sec, name) in self._SEEDED:
            raise ConfigError(f"unknown config key {key!r}")
        if sec == "model" and name in self._MOGA_KEYS and not key.startswith("moga."):
            raise ConfigError(f"{key!r} is spelled moga.{name}")
        setattr(obj, name, _parse(raw, getattr(obj, name), key))

    def validate(self) -> "RunConfig":
        try:
            self.model.__post_init__()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.model.image_size != self.data.size:
            raise ConfigError(f"model.image_size {self.model.image_size} != data.size {self.data.size}")
        for sec in ("pretrain", "train"):
            t = getattr(self, sec)
            if t.steps < 0 or t.batch_size < 1 or t.frames < 2:
                raise ConfigError(f"{sec}: need steps >= 0, batch_size >= 1, frames >= 2")
            if t.lr_schedule not in ("constant", "cosine"):
                raise ConfigError(f"{sec}.lr_schedule must be constant or cosine")
        if not 0 <= self.corrupt.base_severity_min <= self.corrupt.base_severity_max <= 1:
            raise ConfigError("corrupt base severity range must satisfy 0 <= min <= max <= 1")
        return self

    def seeded(self) -> "RunConfig":
        """Push the master seed into the sections that carry their own."""
        self.data.seed = self.seed
        self.pretrain.seed = self.seed
        self.train.seed = self.seed
        return self


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if isinstance(current, str):
            return raw
        if current is None:
            return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"cannot set {key}")


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, _, v = line.partition("=")
        cfg.set(k.strip(), v)
    return cfg


def load_config(path: Path | None = None, seed: int | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        parse_config_text(text, cfg)
    if seed is not None:
        cfg.seed = seed
    return cfg.validate().seeded()


def write_resolved(cfg: RunConfig, out_dir: Path, name: str = "run.cfg") -> Path:
    path = Path(out_dir) / name
    path.write_text("# resolved configuration; rerun with --config " + name + "\n" + cfg.to_text())
    return path
