"""Command-line harness: data generation, corruption, training, evaluation, ablations.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, RunConfig, load_config, write_resolved
from .corrupt import KINDS, TemporalSchedule, corrupt_clip, corruption_manifest
from .data import DataError, clip_seed, generate_dataset, prepare_out_dir, read_dataset, write_clip, write_meta
from .numkit import NumericError
from .pipeline import evaluate_model, gate_matrix, predict_dataset
from .streammem import ADAPTED, DegeneratePromptError, StreamSegModel
from .train import moga_parameter_names, pretrain, train
from .vosmetrics import MissingPredictionError

log = logging.getLogger("mogakit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

REFERENCE_LABEL = "paper, not reproduced at toy scale"
SWEEPS = {
    "rank": [4, 8, 16, 32],
    "temperature": [0.1, 0.3, 0.5, 0.7],
    "conditioning": ["none", "memory", "object"],
}
REFERENCE_VALUES = {
    "rank": {"grid": [32, 64, 128, 256, 512], "JF": [79.3, 79.4, 79.9, 79.8, 79.7]},
    "temperature": {"grid": [0.1, 0.3, 0.5, 0.7], "JF": [79.9, 79.9, 79.7, 79.8]},
    "conditioning": {"grid": ["none", "memory", "object"], "JF": [69.6, 70.9, 71.8]},
}


# ---------------------------------------------------------------- helpers

def _load_clips(path: str):
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset {p} does not exist")
    return read_dataset(p)


def _load_checkpoint(path: str):
    if not Path(path).exists():
        raise DataError(f"checkpoint {path} does not exist")
    return load_model(Path(path))


def _write_losses(path: Path, losses: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(v)])


def adapt(base: StreamSegModel, clips, cfg: RunConfig, rank=None, conditioning=None,
          tau_target=None) -> tuple[StreamSegModel, list[float]]:
    """Attach fresh MoGA to a copy of ``base`` and train it on ``clips``; ``base`` is untouched."""
    model = base.copy_base()
    model.attach_moga(np.random.default_rng([cfg.seed, 1]),
                      rank=rank if rank is not None else cfg.model.rank,
                      conditioning=conditioning or cfg.model.conditioning,
                      sampler=cfg.model.gumbel_sampler)
    tcfg = cfg.train
    if tau_target is not None:
        tcfg = dataclasses.replace(tcfg, tau_target=float(tau_target))
        model.cfg.tau = float(tau_target)
    losses = train(model, clips, tcfg, moga_parameter_names(model))
    return model, losses


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    clips = generate_dataset(cfg.data)
    for c in clips:
        write_clip(out, c)
    write_resolved(cfg, out)
    log.info("wrote %d clips to %s", len(clips), out)


def cmd_corrupt(args, cfg: RunConfig) -> None:
    src, out = Path(args.dataset), Path(args.out)
    clips = _load_clips(args.dataset)
    kind = args.kind or cfg.corrupt.kind
    if kind != "all" and kind not in KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}; expected 'all' or one of {KINDS}")
    prepare_out_dir(out, args.force)
    cc = cfg.corrupt
    for i, clip in enumerate(clips):
        k = KINDS[i % len(KINDS)] if kind == "all" else kind
        sched = TemporalSchedule.sample(clip.T, clip_seed(cfg.seed, i), n_components=cc.components,
                                        max_amp=cc.max_amplitude,
                                        base_range=(cc.base_severity_min, cc.base_severity_max))
        bad = corrupt_clip(clip, k, sched)
        d = write_clip(out, bad, write_masks=False)
        shutil.copytree(src / clip.clip_id / "masks", d / "masks")
        write_meta(d / "corruption.meta", corruption_manifest(k, sched))
    write_resolved(cfg, out)
    log.info("corrupted %d clips (%s) into %s", len(clips), kind, out)


def cmd_pretrain(args, cfg: RunConfig) -> None:
    clips = _load_clips(args.dataset)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    model = StreamSegModel.init(cfg.model, np.random.default_rng([cfg.seed, 0]))
    t0 = time.time()
    losses = pretrain(model, clips, cfg.pretrain)
    save_model(out / "base.moga1", model, {"seed": cfg.seed, "phase": "pretrain"})
    _write_losses(out / "losses.csv", losses)
    write_resolved(cfg, out)
    log.info("pretrained %d steps in %.1fs -> %s", len(losses), time.time() - t0, out / "base.moga1")


def cmd_train_moga(args, cfg: RunConfig) -> None:
    base, _ = _load_checkpoint(args.checkpoint)
    if base.moga:
        raise DataError(f"{args.checkpoint} already carries MoGA adapters; pass a base checkpoint")
    clips = _load_clips(args.dataset)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    model, losses = adapt(base, clips, cfg)
    save_model(out / "adapted.moga1", model, {"seed": cfg.seed, "phase": "train-moga"})
    _write_losses(out / "losses.csv", losses)
    write_resolved(cfg, out)
    log.info("adapted %d steps -> %s", len(losses), out / "adapted.moga1")


def cmd_eval(args, cfg: RunConfig) -> None:
    model, _ = _load_checkpoint(args.checkpoint)
    clips = _load_clips(args.dataset)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    rep = evaluate_model(model, clips, dataset=args.name or Path(args.dataset).name,
                         tol_px=cfg.eval.tol_px, exclude_prompt_frame=cfg.eval.exclude_prompt_frame)
    rep.write_csv(out / "metrics.csv")
    rep.write_traces(out / "traces.csv")
    with open(out / "frame_jf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "JF"])
        for t, v in rep.per_frame_jf().items():
            w.writerow([t, repr(v)])
    write_resolved(cfg, out)
    print(f"J {rep.J:.4f}  F {rep.F:.4f}  J&F {rep.JF:.4f}")


def run_ablation(base: StreamSegModel, train_clips, eval_sets: dict, cfg: RunConfig, sweep: str):
    """Rows of (setting, {eval name: MetricsReport}); the first row is the frozen base."""
    rows = [("base", {n: evaluate_model(base, c) for n, c in eval_sets.items()})]
    for value in SWEEPS[sweep]:
        kw = {"rank": {"rank": value}, "temperature": {"tau_target": value},
              "conditioning": {"conditioning": value}}[sweep]
        model, _ = adapt(base, train_clips, cfg, **kw)
        rows.append((str(value), {n: evaluate_model(model, c) for n, c in eval_sets.items()}))
        log.info("%s=%s: %s", sweep, value, {n: round(r.JF, 4) for n, r in rows[-1][1].items()})
    return rows


def write_ablation(path: Path, sweep: str, rows) -> None:
    ref = REFERENCE_VALUES[sweep]
    names = list(rows[0][1])
    with open(path, "w", newline="") as fh:
        pairs = " ".join(f"{g}:{v}" for g, v in zip(ref["grid"], ref["JF"]))
        fh.write(f"# reference J&F ({REFERENCE_LABEL}): {pairs}\n")
        w = csv.writer(fh)
        w.writerow(["sweep", "setting"] + [f"{n}_{m}" for n in names for m in ("J", "F", "JF")]
                   + ["reference_JF"])
        lookup = dict(zip(map(str, ref["grid"]), ref["JF"]))
        for setting, reps in rows:
            vals = [repr(getattr(reps[n], m)) for n in names for m in ("J", "F", "JF")]
            w.writerow([sweep, setting] + vals + [lookup.get(setting, "")])


def cmd_ablate(args, cfg: RunConfig) -> None:
    base, _ = _load_checkpoint(args.checkpoint)
    train_clips = _load_clips(args.train)
    eval_sets = {"corrupted": _load_clips(args.eval)}
    if args.clean:
        eval_sets["clean"] = _load_clips(args.clean)
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    rows = run_ablation(base, train_clips, eval_sets, cfg, args.sweep)
    write_ablation(out / f"ablate_{args.sweep}.csv", args.sweep, rows)
    write_resolved(cfg, out)
    for setting, reps in rows:
        print(f"{args.sweep}={setting}: " + "  ".join(f"{n} J&F {r.JF:.4f}" for n, r in reps.items()))


def gate_strip(gates: np.ndarray, cell: int = 4, gap: int = 2) -> np.ndarray:
    """Objects down, frames across; each tile is a (projection x rank) bit map, black = active."""
    O, T, P, R = gates.shape
    th, tw = P * cell, R * cell
    img = np.full((O * th + (O + 1) * gap, T * tw + (T + 1) * gap), 128, dtype=np.uint8)
    for o in range(O):
        for t in range(T):
            tile = np.where(gates[o, t] > 0, 0, 255).astype(np.uint8)
            tile = np.kron(tile, np.ones((cell, cell), dtype=np.uint8))
            y, x = gap + o * (th + gap), gap + t * (tw + gap)
            img[y:y + th, x:x + tw] = tile
    return img


def cmd_export_gates(args, cfg: RunConfig) -> None:
    model, _ = _load_checkpoint(args.checkpoint)
    if not model.moga:
        raise DataError(f"{args.checkpoint} has no MoGA gates to export")
    clips = {c.clip_id: c for c in _load_clips(args.dataset)}
    if args.clip not in clips:
        raise DataError(f"clip {args.clip!r} not in dataset; have {sorted(clips)[:5]}...")
    clip = clips[args.clip]
    out = Path(args.out)
    prepare_out_dir(out, args.force)
    pred = predict_dataset(model, [clip])[clip.clip_id]
    gates = gate_matrix(model, pred)
    Image.fromarray(gate_strip(gates), mode="L").save(out / "gates.png")
    with open(out / "gates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "object_id", "frame", "applied"] + list(ADAPTED))
        for o, oid in enumerate(clip.object_ids):
            for t in range(clip.T):
                bits = ["".join(str(int(b)) for b in gates[o, t, p]) for p in range(len(ADAPTED))]
                w.writerow([clip.clip_id, oid, t, int(t > 0)] + bits)
    write_resolved(cfg, out)
    log.info("exported %d gate rows to %s", gates.shape[0] * gates.shape[1], out)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mogakit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="render a synthetic moving-shapes dataset")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("corrupt", parents=[common], help="corrupt a dataset")
    s.add_argument("dataset")
    s.add_argument("--kind", help=f"'all' (round-robin) or one of {', '.join(KINDS)}")
    s.set_defaults(fn=cmd_corrupt)

    s = sub.add_parser("pretrain", parents=[common], help="train the base model on clean clips")
    s.add_argument("dataset")
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("train-moga", parents=[common], help="freeze a base checkpoint and train MoGA + LayerNorm")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.set_defaults(fn=cmd_train_moga)

    s = sub.add_parser("eval", parents=[common], help="J, F and J&F of a checkpoint on a dataset")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--name", help="dataset label in the report")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="rank / temperature / conditioning sweep")
    s.add_argument("checkpoint", help="base checkpoint")
    s.add_argument("--train", required=True, help="corrupted training dataset")
    s.add_argument("--eval", required=True, help="corrupted evaluation dataset")
    s.add_argument("--clean", help="optional clean evaluation dataset")
    s.add_argument("--sweep", required=True, choices=sorted(SWEEPS))
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("export-gates", parents=[common], help="gate bit strip + CSV for one clip")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--clip", required=True)
    s.set_defaults(fn=cmd_export_gates)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
        args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, DegeneratePromptError, MissingPredictionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
