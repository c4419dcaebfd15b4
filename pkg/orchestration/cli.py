"""
cli.py

Purpose:
--------
Command-line entry point.

    scan prepare  --dataset jsrt
    scan train    --mode scan --lambda 0.001
    scan eval     --checkpoint runs/<run>/segmentor_final.ckpt [--eval-set full]
    scan predict  --checkpoint ... image.png [image2.IMG ...]
    scan selftest

Flags override run_config.yaml; the merged configuration is what each run
manifest records. Exit status is 0 on success and 1 if any error fired.
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from orchestration.commands import EVAL_SETS, cmd_eval, cmd_predict, cmd_prepare, cmd_selftest, cmd_train
from schema.config import load_run_config

logger = logging.getLogger(__name__)


# flag dest -> dotted config key
OVERRIDES = {
    "seed": "train.seed",
    "mode": "train.mode",
    "lam": "train.lam",
    "epochs": "train.epochs",
    "pretrain_epochs": "train.pretrain_epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "resolution": "train.resolution",
    "deterministic": "train.deterministic",
    "dataset": "data.dataset",
    "split_file": "data.split_file",
    "split_seed": "data.split_seed",
    "skip_failed": "data.skip_failed",
    "cache_dir": "data.cache_dir",
    "postprocess": "eval.postprocess",
    "overlay": "eval.overlay",
    "latency_budget": "eval.latency_budget_s",
    "out_dir": "out_dir",
}


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(levelname)s] %(message)s",
        stream=sys.stderr,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration YAML (default: schema/run_config.yaml)")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=["fcn_only", "scan"])
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--pretrain-epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--resolution", type=int)
    common.add_argument("--dataset", choices=["jsrt", "montgomery", "combined", "synthetic"])
    common.add_argument("--split-file")
    common.add_argument("--split-seed", type=int)
    common.add_argument("--skip-failed", action="store_true", default=None)
    common.add_argument("--cache-dir")
    common.add_argument("--checkpoint")
    common.add_argument("--no-postprocess", dest="postprocess", action="store_false", default=None)
    common.add_argument("--overlay", action="store_true", default=None)
    common.add_argument("--latency-budget", type=float)
    common.add_argument("--deterministic", action="store_true", default=None)
    common.add_argument("--out-dir")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="scan", description="Chest X-ray organ segmentation with an adversarial critic")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="scan, split and profile a dataset")
    train = sub.add_parser("train", parents=[common], help="train (resumes the latest matching run)")
    train.add_argument("--fresh", action="store_true", help="start a new run directory")
    ev = sub.add_parser("eval", parents=[common], help="metric report for a checkpoint")
    ev.add_argument("--eval-set", choices=EVAL_SETS, default="evaluation")
    predict = sub.add_parser("predict", parents=[common], help="masks for image files")
    predict.add_argument("images", nargs="+")
    selftest = sub.add_parser("selftest", parents=[common], help="gradient checks and metric oracle")
    selftest.add_argument("--trials", type=int, default=10_000)
    return parser


def overrides_from(args: argparse.Namespace) -> Dict:
    return {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    load_dotenv()

    try:
        if args.command == "selftest":
            result = cmd_selftest(trials=args.trials)
            print(json.dumps(result, indent=2, sort_keys=True))
            return 0 if result["passed"] else 1

        config = load_run_config(args.config, overrides_from(args))
        if args.command == "prepare":
            result = cmd_prepare(config, args.workers, argv)
        elif args.command == "train":
            result = cmd_train(config, args.fresh, args.workers, argv)
        elif args.command == "eval":
            result = cmd_eval(config, args.checkpoint, args.eval_set, args.workers, argv)
        else:
            result = cmd_predict(config, args.images, args.checkpoint, argv)
    except (ValueError, OSError) as e:
        logger.error("[FAILED] %s: %s", args.command, e)
        return 1

    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    if result.get("failures") or result.get("failed"):
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
