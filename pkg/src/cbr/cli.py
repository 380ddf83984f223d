"""Command-line entry point.

Every subcommand operates on one working directory (``--out``); run
them in order: gen-data, train (once per stage), infer, eval. The two
ablate commands are self-contained sweeps over the same directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import CBRError
from .pipeline import (
    cmd_ablate_cascade,
    cmd_ablate_offsets,
    cmd_eval,
    cmd_gen_data,
    cmd_infer,
    cmd_train,
    load_config,
)
from .sampling import Stage


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, required=True, help="working directory for artifacts")
    common.add_argument("--config", type=Path, help="JSON config file (defaults apply otherwise)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--epochs", type=int, help="override epochs for both stages")
    common.add_argument(
        "--offset-scheme", choices=["param", "frame", "unit"], help="offset parameterization"
    )
    common.add_argument("--theta", type=float, help="proposal score threshold")
    common.add_argument("--k-proposal", type=int, help="proposal cascade depth")
    common.add_argument("--k-detection", type=int, help="detection cascade depth")

    parser = argparse.ArgumentParser(
        prog="cbr", description="two-stage temporal action proposal + detection pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p_train = sub.add_parser("train", parents=[common], help="train one stage")
    p_train.add_argument("--stage", choices=["proposal", "detection"], required=True)
    sub.add_parser("infer", parents=[common], help="run cascades + NMS, write ranked results")
    p_eval = sub.add_parser("eval", parents=[common], help="score proposals/detections")
    p_eval.add_argument("--task", choices=["proposals", "detection", "both"], default="both")
    sub.add_parser("ablate-offsets", parents=[common], help="compare offset schemes")
    sub.add_parser("ablate-cascade", parents=[common], help="sweep cascade depths")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config,
            {
                "seed": args.seed,
                "epochs": args.epochs,
                "offset_scheme": args.offset_scheme,
                "theta": args.theta,
                "k_proposal": args.k_proposal,
                "k_detection": args.k_detection,
            },
        )
        if args.command == "gen-data":
            cmd_gen_data(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, Stage(args.stage))
        elif args.command == "infer":
            cmd_infer(cfg, args.out)
        elif args.command == "eval":
            cmd_eval(cfg, args.out, args.task)
        elif args.command == "ablate-offsets":
            cmd_ablate_offsets(cfg, args.out)
        elif args.command == "ablate-cascade":
            cmd_ablate_cascade(cfg, args.out)
    except (CBRError, OSError, json.JSONDecodeError) as e:
        print(f"cbr {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
