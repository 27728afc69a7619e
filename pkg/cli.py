#!/usr/bin/env python3
import argparse
import logging
import sys

from dotenv import load_dotenv

from dadkit.adversary import Augmentation
from dadkit.discretizer import PRESETS
from dadkit.errors import ConfigError
from dadkit.model import ARCHITECTURES
from dadkit.objectives import Objective
from utils import get_env, get_runner


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dadkit",
        description="Discrete adversarial distillation: discretizer, cache, students, evaluation",
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Override one config key (repeatable)"
    )
    common.add_argument("--seed", type=int)

    top = parser.add_subparsers(dest="command", required=True)

    # PREPARE-DATA
    prep = top.add_parser("prepare-data", parents=[common], help="Write a train/test dataset to disk")
    prep.add_argument("--source", choices=["synthetic", "cifar10"], default="synthetic")
    prep.add_argument("--out", required=True)
    prep.add_argument("--per-class", type=int, default=100, dest="per_class", help="train images per class")
    prep.add_argument("--test-per-class", type=int, default=50, dest="test_per_class", help="test images per class")
    prep.add_argument("--classes", type=int, default=10)
    prep.add_argument("--size", type=int, default=32)
    prep.add_argument("--download", help="torchvision download directory (cifar10)")

    # TRAIN-VQ
    vq = top.add_parser("train-vq", parents=[common], help="Train the discretizer")
    vq.add_argument("--data", required=True)
    vq.add_argument("--out", required=True)
    vq.add_argument("--epochs", type=int)
    vq.add_argument("--preset", choices=sorted(PRESETS))

    # BUILD-CACHE
    cache = top.add_parser("build-cache", parents=[common], help="Generate the augmentation cache")
    cache.add_argument("--data", required=True)
    cache.add_argument("--teacher", required=True)
    cache.add_argument("--vq", required=True)
    cache.add_argument("--out", required=True)
    cache.add_argument("--workers", type=int)
    cache.add_argument("--retries", type=int)
    cache.add_argument("--keep-rejected", action="store_true", dest="keep_rejected")
    cache.add_argument("--augmentation", choices=[a.value for a in Augmentation])
    cache.add_argument("--verify", action="store_true", help="Re-predict every record after writing")

    # TRAIN
    tr = top.add_parser("train", parents=[common], help="Train a student (or a diverse teacher)")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--teacher")
    tr.add_argument("--vq")
    tr.add_argument("--cache")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--objective", choices=[o.value for o in Objective])
    tr.add_argument("--architecture", choices=sorted(ARCHITECTURES))
    tr.add_argument("--corrupt", help="Comma-separated corruption kinds added to the training data")
    tr.add_argument("--log", help="Train log CSV (default: <out>.log.csv)")

    # EVAL
    ev = top.add_parser("eval", parents=[common], help="Robustness report over a suite manifest")
    ev.add_argument("--model", action="append", required=True, help="name=path (repeatable)")
    ev.add_argument("--suites", required=True)
    ev.add_argument("--baseline", help="Classifier normalizing mCE")
    ev.add_argument("--report", help="CSV output")
    ev.add_argument("--adversarial", metavar="EPS", help="Also report FGSM/PGD accuracy at this radius")
    ev.add_argument("--pgd-steps", type=int, default=10, dest="pgd_steps")
    ev.add_argument("--data", help="Dataset for the adversarial readout (default: BASE)")
    ev.add_argument("--workers", type=int, default=1)

    # DIAGNOSE
    dg = top.add_parser("diagnose", parents=[common], help="Randomized checks of the robustness bounds")
    dg.add_argument("check", choices=["lemma31", "lemma33", "lemma34", "wasserstein"])
    dg.add_argument("--trials", type=int, default=1000)
    dg.add_argument("--workers", type=int, default=1)
    dg.add_argument("--epsilon-b", type=float, default=0.1, dest="epsilon_b")
    dg.add_argument("--p", help="Distribution file (wasserstein)")
    dg.add_argument("--q", help="Distribution file (wasserstein)")
    dg.add_argument("--label-scale", type=float, dest="label_scale")
    dg.add_argument("--out", help="Directory for the run manifest")

    # CHART-DATA
    ch = top.add_parser("chart-data", parents=[common], help="Distance vs accuracy rows per model and suite")
    ch.add_argument("--model", action="append", required=True, help="name=path (repeatable)")
    ch.add_argument("--suites", required=True)
    ch.add_argument("--clean")
    ch.add_argument("--out", required=True)
    ch.add_argument("--batches", type=int, default=1000)
    ch.add_argument("--batch-size", type=int, default=64, dest="batch_size")

    # BUDGET
    bd = top.add_parser("budget", parents=[common], help="Relative training cost from train logs")
    bd.add_argument("--log", action="append", required=True, help="name=path (repeatable)")
    bd.add_argument("--baseline", help="Run the others are relative to (default: first --log)")
    bd.add_argument("--out")

    # EXPERIMENT
    ex = top.add_parser("experiment", parents=[common], help="CE / KD / DAD on held-out corruptions")
    ex.add_argument("--out", required=True)
    ex.add_argument("--per-class", type=int, default=100, dest="per_class")
    ex.add_argument("--test-per-class", type=int, default=50, dest="test_per_class")
    ex.add_argument("--epochs", type=int)
    ex.add_argument("--teacher-epochs", type=int, default=10, dest="teacher_epochs")
    ex.add_argument("--vq-epochs", type=int, dest="vq_epochs")
    ex.add_argument("--seeds", default="0,1,2")
    ex.add_argument("--train-kinds", default="gaussian_noise,blur,contrast", dest="train_kinds")
    ex.add_argument("--heldout-kinds", default="fog,pixelate", dest="heldout_kinds")
    ex.add_argument("--severities", default="1-5")
    ex.add_argument("--margin", type=float, default=2.0, help="Required DAD - CE gap in points")

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage()
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    args.argv = list(argv)

    level = get_env("DAD_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level if level in logging.getLevelNamesMapping() else "INFO",
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        runner = get_runner(args.command, args)
        result = runner.execute()
        print(runner.summary(result))
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"{args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"Operation failed: {e}")
        logging.getLogger(__name__).debug("traceback", exc_info=True)
        return 1
    return 0


def main():
    load_dotenv()
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
