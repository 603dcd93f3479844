"""Command line: ``stylestego {train,embed,extract,eval,ablate}``.

Failures print one line ``stylestego-error: <kind>: <detail>`` to stderr and
exit non-zero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, codec, evaluation
from .config import TOY, TrainConfig, parse_kv
from .data import ImageDecodeError, ImageSet, load_image, save_png, to_tensor
from .extractor import extract as extract_bits
from .trainer import checkpoint_path, load_checkpoint, run_training

ERROR_PREFIX = "stylestego-error"


class CliError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # single-line, machine-parsable
        print(f"{ERROR_PREFIX}: usage: {message}", file=sys.stderr)
        sys.exit(2)


def _echo(what: str, d: dict) -> None:
    print(f"resolved {what}: {json.dumps(d, sort_keys=True)}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=("toy", "full"), default="toy")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "seed":
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.name.upper())


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    base = dict(TOY) if args.preset == "toy" else {}
    if args.config:
        base.update(parse_kv(Path(args.config).read_text()))
    base.update(overrides)
    return TrainConfig.from_dict(base)


def _load(path: str):
    try:
        return load_checkpoint(path).eval()
    except FileNotFoundError as e:
        raise CliError("checkpoint", f"not found: {path}") from e


def _image(path: str, size: int) -> torch.Tensor:
    img = load_image(path)
    if img.shape[:2] != (size, size):
        raise CliError("resolution", f"{path} is {img.shape[1]}x{img.shape[0]}, checkpoint works on {size}x{size}")
    return to_tensor(img)


def cmd_train(args) -> None:
    cfg = _resolve_config(args)
    _echo("config", cfg.to_dict())
    _, rows = run_training(cfg, progress_every=args.progress)
    last = rows[-1]
    print(f"trained {len(rows)} steps; final bit_acc {last['bit_acc']:.4f}; "
          f"checkpoint {checkpoint_path(cfg.out_dir)}")


def cmd_embed(args) -> None:
    state = _load(args.checkpoint)
    cfg = state.cfg
    key = cfg.key if args.key is None else args.key
    bits = codec.read_message(args.message)
    _echo("embed", {"checkpoint": args.checkpoint, "key": key, "message_bits": len(bits),
                    "capacity": cfg.grid_capacity, "out": args.out})
    if len(bits) > cfg.grid_capacity:
        raise CliError("capacity", f"message has {len(bits)} bits, capacity is {cfg.grid_capacity}")
    if Path(args.out).suffix.lower() != ".png":
        raise CliError("format", f"stego output must be lossless PNG, got {args.out!r}")
    content = _image(args.content, cfg.crop_size)
    secret = codec.map_bits(bits[None], state.grid, key)
    with torch.no_grad():
        stego = state.hiding(content, secret)
    save_png(args.out, stego)
    print(f"capacity {cfg.grid_capacity} bits; payload {len(bits)} bits; wrote {args.out}")


def cmd_extract(args) -> None:
    state = _load(args.checkpoint)
    cfg = state.cfg
    key = cfg.key if args.key is None else args.key
    _echo("extract", {"checkpoint": args.checkpoint, "key": key, "len": args.len, "out": args.out})
    if args.len <= 0:
        raise CliError("length", "--len must be positive")
    if args.len > cfg.grid_capacity:
        raise CliError("capacity", f"--len {args.len} exceeds capacity {cfg.grid_capacity}")
    stego = _image(args.stego, cfg.crop_size)
    bits = extract_bits(stego, state.extractor, key, args.len)[0]
    codec.write_message(args.out, bits)
    print(f"extracted {len(bits)} bits -> {args.out}")


def _checkpoints(args) -> list[str]:
    paths = list(args.checkpoint or [])
    if args.run_dir:
        paths += [str(p) for p in sorted(Path(args.run_dir).glob("step_*.ckpt"))]
        final = Path(args.run_dir) / "final.ckpt"
        if final.exists():
            paths.append(str(final))
    if not paths:
        raise CliError("checkpoint", "give --checkpoint (repeatable) or --run-dir")
    return paths


def cmd_eval(args) -> None:
    paths = _checkpoints(args)
    target = _load(paths[-1])
    images = ImageSet(args.images, target.cfg.crop_size)
    det_cfg = evaluation.DetectorConfig(seed=args.seed or 0, n_train=args.pairs, n_test=args.test_pairs,
                                        min_pairs=args.min_pairs, epochs=args.epochs, repeats=args.repeats)
    _echo("eval", {"checkpoints": paths, "images": args.images, "trials": args.trials,
                   "scenario": args.scenario, "detector": dataclasses.asdict(det_cfg)})
    report = evaluation.EvalReport(config=target.cfg.to_dict(), msg_len=target.cfg.msg_len)
    if args.scenario:
        kinds = evaluation.SCENARIOS if args.scenario == "all" else (args.scenario,)
        for kind in kinds:
            try:
                specs = evaluation.ScenarioSpec.standard(kind, paths)
            except ValueError as e:
                raise CliError("scenario", str(e)) from e
            report.detector[kind] = evaluation.run_scenario(specs, images, det_cfg)
    report.bit_trials = args.trials
    report.bit_accuracy = evaluation.bit_accuracy(target, images, args.trials, seed=args.seed or 0)
    report.ssim_samples = min(args.trials, 50)
    report.ssim_mean = evaluation.stego_cover_ssim(target, images, report.ssim_samples, seed=args.seed or 0)
    if len(paths) >= 2:
        rng = np.random.default_rng(args.seed or 0)
        probe = images.sample(rng, 1)
        bits = codec.random_bits(rng, target.cfg.msg_len)
        report.divergence = evaluation.checkpoint_divergence(paths, probe, bits)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json())


def cmd_ablate(args) -> None:
    cfg = _resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    _echo("ablate", {"config": cfg.to_dict(), "seeds": seeds, "eval_images": args.eval_images})
    rows = evaluation.ablation_suite(cfg, seeds, args.eval_images, args.trials)
    print(evaluation.format_ablation(rows))
    if args.report:
        Path(args.report).write_text(json.dumps(rows, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stylestego", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    _add_config_flags(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--progress", type=int, default=0, help="log every N steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="hide a message while stylising an image")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--content", required=True)
    e.add_argument("--message", required=True, help="message file (.hex or 0/1 text)")
    e.add_argument("--key", type=int, help="stego key (default: the checkpoint's training key)")
    e.add_argument("--out", required=True, help="output .png")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_embed)

    x = sub.add_parser("extract", help="recover a message from a stego image")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--stego", required=True)
    x.add_argument("--key", type=int)
    x.add_argument("--len", type=int, required=True, help="message length in bits")
    x.add_argument("--out", required=True, help="output file (.hex or bit text)")
    x.add_argument("--seed", type=int)
    x.set_defaults(func=cmd_extract)

    v = sub.add_parser("eval", help="bit accuracy, SSIM, steganalysis scenarios")
    v.add_argument("--checkpoint", action="append", help="repeatable; ordered by training step")
    v.add_argument("--run-dir", help="use every step_*.ckpt plus final.ckpt of a run")
    v.add_argument("--images", required=True, help="held-out content images")
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--scenario", choices=(*evaluation.SCENARIOS, "all"))
    v.add_argument("--pairs", type=int, default=200, help="detector training pairs")
    v.add_argument("--test-pairs", type=int, default=100)
    v.add_argument("--min-pairs", type=int, default=200)
    v.add_argument("--epochs", type=int, default=12)
    v.add_argument("--repeats", type=int, default=3, help="detector fits averaged per scenario")
    v.add_argument("--report", help="write the JSON report here")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="attention / filter-init ablation table")
    _add_config_flags(a)
    a.add_argument("--seed", type=int)
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--eval-images", required=True)
    a.add_argument("--trials", type=int, default=50)
    a.add_argument("--report")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CliError as e:
        print(f"{ERROR_PREFIX}: {e.kind}: {e}", file=sys.stderr)
        return 1
    except ImageDecodeError as e:
        print(f"{ERROR_PREFIX}: decode: {e}", file=sys.stderr)
        return 1
    except checkpoint.CheckpointError as e:
        print(f"{ERROR_PREFIX}: checkpoint: {e}", file=sys.stderr)
        return 1
    except codec.CapacityError as e:
        print(f"{ERROR_PREFIX}: capacity: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"{ERROR_PREFIX}: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
