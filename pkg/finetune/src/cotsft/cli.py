"""Command line: train an adapter from an export, or serve a trained one."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import TrainConfig
from .errors import CotSftError
from .model import create_tiny_base_model
from .serve import serve
from .train import train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotsft",
        description="Adapter fine-tuning on exported reasoning traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-base", help="write a fresh tiny base model")
    p.add_argument("--out", required=True, help="path for the base model file")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train an adapter")
    p.add_argument("--base", required=True, help="base model file")
    p.add_argument("--data", required=True, help="instruction/response JSON lines")
    p.add_argument("--out", required=True, help="adapter output directory")
    p.add_argument("--steps", type=int, default=None,
                   help="cap optimizer steps (default: cover the configured epochs)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="serve a trained adapter over HTTP")
    p.add_argument("--adapter", required=True, help="adapter directory")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--base", default=None,
                   help="base model file (default: path recorded in the adapter)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "init-base":
            path = create_tiny_base_model(args.out, seed=args.seed)
            print(f"base model -> {path}")
        elif args.command == "train":
            config = TrainConfig(
                base_model_path=args.base,
                data_path=args.data,
                output_dir=args.out,
                max_steps=args.steps,
                seed=args.seed,
            )
            result = train(config)
            print(f"trained {result.steps} steps; loss "
                  f"{result.losses[0]:.4f} -> {result.losses[-1]:.4f}; "
                  f"adapter -> {result.adapter_dir}")
        else:
            serve(args.adapter, args.port, host=args.host,
                  base_model_path=args.base)
    except CotSftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
