"""Command-line entry point: ``posetrans <command> [--config PATH] ...``.

Exit status is 0 on success, 2 for invalid input (bad config, missing file,
malformed annotations) and 3 for runtime failures (non-convergence etc.).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import PoseTransError, ValidationError
from .pipeline import PipelineConfig, run_command

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; relative paths resolve against its directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, help="worker processes for augment")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="posetrans", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-pcm", parents=[common], help="fit the pose mixture and write a cluster report")
    sub.add_parser("cluster-report", parents=[common], help="cluster report for an existing mixture")
    sub.add_parser("train-disc", parents=[common], help="train the pose plausibility scorer")
    aug = sub.add_parser("augment", parents=[common], help="build one augmented sample per instance")
    aug.add_argument("--selection", choices=("pcm", "random"))
    aug.add_argument("--no-refit", action="store_true", help="skip refitting the mixture afterwards")
    ev = sub.add_parser("evaluate", parents=[common], help="AP/AR and category-balanced metrics")
    ev.add_argument("predictions", help="COCO keypoint results JSON")
    bl = sub.add_parser("baselines", parents=[common], help="cluster-based oversampling / reweighting")
    bl.add_argument("mode", choices=("oversample", "reweight"))
    return p


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "selection", None):
        cfg.selection = args.selection
    if getattr(args, "no_refit", False):
        cfg.refit = False
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        result = run_command(args.command, cfg, predictions=getattr(args, "predictions", None),
                             mode=getattr(args, "mode", None))
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except PoseTransError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
