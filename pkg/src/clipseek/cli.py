"""Command-line entry point: generate / train / eval / localize.

Exit statuses: 0 ok, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluation, ndcore as nd, trainer
from .config import Config, ConfigError, apply_overrides, load_config
from .data import (Vocab, generate_synthetic, load_dataset, mean_clip_length,
                   save_dataset, split_fractional, tokenize)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class DataError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipseek")
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="shorthand for --override seed=N")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a localizer")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--out", type=Path, required=True)

    l = sub.add_parser("localize", help="localize a single query")
    l.add_argument("--checkpoint", type=Path, required=True)
    l.add_argument("--data", type=Path, required=True)
    l.add_argument("--video", required=True)
    l.add_argument("--query", required=True)
    l.add_argument("--trace-out", type=Path)
    return p


def _resolve_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg.set("seed", str(args.seed))
    return cfg


def _run_dir_config(checkpoint: Path, cfg_from_args: Config, args) -> Config:
    """Prefer the resolved config written next to the checkpoint."""
    resolved = checkpoint.parent / "config.resolved"
    if args.config is None and resolved.exists():
        cfg = load_config(resolved)
        apply_overrides(cfg, args.override)
        return cfg
    return cfg_from_args


def _load_run(checkpoint: Path, data: Path, cfg: Config):
    params = nd.load_checkpoint(checkpoint)
    vocab_path = checkpoint.parent / "vocab.txt"
    if not vocab_path.exists():
        raise DataError(f"missing vocabulary file {vocab_path}")
    vocab = Vocab.load(vocab_path)
    videos, annotations = load_dataset(data)
    splits = split_fractional(annotations, cfg.split_fractions(),
                              int(cfg["split.seed"]))
    width = mean_clip_length(splits[0])
    return params, vocab, videos, annotations, splits, width


def _cmd_generate(args, cfg: Config) -> int:
    videos, annotations = generate_synthetic(cfg.synthetic_spec())
    args.out.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, videos, annotations)
    cfg.write(args.out / "config.resolved")
    print(f"wrote {len(videos)} videos, {len(annotations)} annotations "
          f"to {args.out}")
    return EXIT_OK


def _cmd_train(args, cfg: Config) -> int:
    result = trainer.train(cfg, args.out, data_root=args.data)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"training log: {result.log_path}")
    return EXIT_OK


def _cmd_eval(args, cfg: Config) -> int:
    cfg = _run_dir_config(args.checkpoint, cfg, args)
    params, vocab, videos, _, splits, width = _load_run(
        args.checkpoint, args.data, cfg)
    split = splits[("train", "val", "test").index(args.split)]
    if not split:
        raise DataError(f"split {args.split!r} is empty")
    report = evaluation.evaluate(params, videos, split, vocab, width,
                                 cfg.hyper(), str(cfg["variant"]),
                                 alphas=cfg.alphas())
    report.write(args.out)
    cfg.write(Path(args.out) / "config.resolved")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_localize(args, cfg: Config) -> int:
    cfg = _run_dir_config(args.checkpoint, cfg, args)
    params, vocab, videos, _, _, width = _load_run(
        args.checkpoint, args.data, cfg)
    if args.video not in videos:
        raise DataError(f"unknown video id {args.video!r}")
    video = videos[args.video]
    tokens = tokenize(args.query)
    if not tokens:
        raise DataError("query contains no tokens")
    (start, end), episode = evaluation.localize(
        params, video, tokens, vocab, width, cfg.hyper(), str(cfg["variant"]))
    print(f"window frames: [{start}, {end})")
    print(f"window seconds: [{start / video.fps:.3f}, {end / video.fps:.3f})")
    for step in episode.trace:
        print(f"  step {step.step}: {step.action.name} -> "
              f"[{step.window.start}, {step.window.end})")
    if args.trace_out:
        with open(args.trace_out, "w") as f:
            episode.write_trace(f)
        print(f"trace: {args.trace_out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except (ConfigError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"generate": _cmd_generate, "train": _cmd_train,
               "eval": _cmd_eval, "localize": _cmd_localize}[args.command]
    try:
        return handler(args, cfg)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # runtime failures get their own status
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
