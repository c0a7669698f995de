"""Command-line entry points.

Subcommands: gen-data, bench-ops, train-toy, ckpt-inspect. Every
subcommand takes --config/--seed/--out; the seed fixes all stochastic
choices, so reruns are reproducible. Exit code 0 on success; failures
print one ``error: <message>`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys

from .bench import run_benchmarks
from .checkpoint import CheckpointError, inspect_checkpoint
from .columnio import ColumnIOError
from .config import RunConfig
from .datagen import generate_dataset
from .roofline import DEFAULT_HARDWARE, HardwareSpec, emit_report
from .train import train_toy


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if not args.out:
        raise ValueError("gen-data requires --out <dataset path>")
    gen = cfg.gen
    generate_dataset(args.out, gen, cfg.seed)
    print(f"wrote {gen.rows} rows x {len(gen.columns)} columns to {args.out}")
    return 0


def cmd_bench_ops(args) -> int:
    cfg = _load_config(args)
    bench_cfg = cfg.bench
    if bench_cfg.seed != cfg.seed:
        bench_cfg = bench_cfg.__class__(**{**bench_cfg.__dict__, "seed": cfg.seed})
    hw_path = args.hw or cfg.hardware_spec
    hw = HardwareSpec.from_json_file(hw_path) if hw_path else DEFAULT_HARDWARE
    profiles = run_benchmarks(bench_cfg)
    report = emit_report(profiles, hw, format=args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report)
        print(f"wrote {len(profiles)}-row report to {args.out}")
    else:
        print(report, end="")
    return 0


def cmd_train_toy(args) -> int:
    cfg = _load_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    if args.shards is not None:
        cfg = cfg.replace(num_shards=args.shards)
    dataset = args.dataset or cfg.dataset
    if not dataset:
        raise ValueError("train-toy requires --dataset (or dataset in the config)")
    if not args.out:
        raise ValueError("train-toy requires --out <directory>")
    result = train_toy(cfg, dataset, out_dir=args.out)
    print(
        f"trained {cfg.steps} steps (shards={cfg.num_shards}): "
        f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; "
        f"outputs in {args.out}"
    )
    return 0


def cmd_ckpt_inspect(args) -> int:
    text = inspect_checkpoint(args.ckpt_dir)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsekit",
        description="Sparse embedding training toolkit: data, benchmarks, toy training, checkpoints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("gen-data", help="generate a synthetic columnar dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("bench-ops", help="run the operator benchmarks and emit a roofline report")
    common(p)
    p.add_argument("--hw", help="hardware spec JSON path")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.set_defaults(func=cmd_bench_ops)

    p = sub.add_parser("train-toy", help="train the toy logistic model end to end")
    common(p)
    p.add_argument("--dataset", help="input dataset path (overrides config)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--shards", type=int, default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("ckpt-inspect", help="summarize a checkpoint directory")
    common(p)
    p.add_argument("ckpt_dir", help="checkpoint directory")
    p.set_defaults(func=cmd_ckpt_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CheckpointError, ColumnIOError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
