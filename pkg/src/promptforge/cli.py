"""Command-line interface.

Subcommands: ``gen-data`` (write a synthetic dataset directory), ``run``
(execute a configured experiment sweep), ``eval`` (score a checkpoint on a
dataset directory), ``heatmap`` (export one class's attention grid).  All
state flows through flags and files; nothing reads environment variables.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import generate_synthetic, load_directory, save_dataset
from .encoders import encode_image
from .evaluation import evaluate, export_heatmap
from .experiment import parse_config, run_experiment
from .prompts import PromptSet, method_forward
from .training import SplitSpec, TrainedState

__all__ = ["main"]


def _cmd_gen_data(args) -> int:
    ds = generate_synthetic(args.classes, args.per_class, args.seed)
    root = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} images across {len(ds.class_names)} classes to {root}")
    return 0


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    out = run_experiment(cfg, args.out)
    print(f"report written to {out}")
    return 0


def _cmd_eval(args) -> int:
    state = TrainedState.load(args.checkpoint)
    ds = load_directory(args.data)
    split = SplitSpec.halves(len(ds.class_names))
    accuracy = evaluate(state, ds, split, args.split)
    print(f"{args.split} accuracy: {accuracy:.2f}")
    return 0


def _cmd_heatmap(args) -> int:
    state = TrainedState.load(args.checkpoint)
    ds = load_directory(args.data) if args.data else generate_synthetic(8, 64, 0)
    if not 0 <= args.image < len(ds):
        raise IndexError(f"image {args.image} out of range for {len(ds)} samples")
    prompts = PromptSet.for_classes(state.weights, ds.class_names, state.context)
    features = encode_image(ds.images[args.image], state.weights)
    result = method_forward(state.spec(), state.weights, prompts, features,
                            state.prompt_net, state.image_net)
    out = export_heatmap(result.attention, args.image, args.class_id, args.out)
    print(f"heatmap written to {out} (CSV twin at {out}.csv)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptforge",
        description="Desk-scale prompt-learning laboratory on frozen dual encoders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    gen.add_argument("--classes", type=int, default=8)
    gen.add_argument("--per-class", type=int, default=64, dest="per_class")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="override the config's out_dir")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=("base", "new"), required=True)
    ev.set_defaults(func=_cmd_eval)

    heat = sub.add_parser("heatmap", help="export one class's attention grid")
    heat.add_argument("--checkpoint", required=True)
    heat.add_argument("--image", type=int, required=True)
    heat.add_argument("--class", type=int, required=True, dest="class_id")
    heat.add_argument("--out", required=True)
    heat.add_argument("--data", default=None,
                      help="dataset directory (default: the shipped synthetic set)")
    heat.set_defaults(func=_cmd_heatmap)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
