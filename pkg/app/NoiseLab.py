import sys
import os
# Add project root to sys.path (NoiseLab folder)
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import argparse
import logging

from src.config.run_config import load_run_config, save_run_config
from src.services.experiment_service import ExperimentService
from src.utils.errors import NoiseLabError
from src.utils.log_utils import setup_logging

logger = logging.getLogger("noiselab")

COMMANDS = ("train", "attack", "similarity", "featuremaps", "sweep", "bench")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="NoiseLab",
        description="Adversarial noise layer experiments: training, FGSM robustness, gradient similarity.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="run config file (INI sections [data] [model] [noise] ...)")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--out", help="overrides run.out")
    parser.add_argument("--weights", help="weights.bin for attack / similarity / featuremaps")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    parser.add_argument("--index", type=int, help="featuremaps: test image index")
    parser.add_argument("--epsilons", help="sweep: comma separated epsilon list")
    parser.add_argument("--seeds", type=int, help="sweep: number of seeds per epsilon")
    parser.add_argument("--untrained", action="store_true", help="similarity: use random initial weights")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING ...")
    return parser


def resolve_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.epsilons:
        overrides.append(f"sweep.epsilons={args.epsilons}")
    if args.seeds is not None:
        overrides.append(f"sweep.seeds={args.seeds}")
    return load_run_config(args.config, overrides)


def run(args):
    cfg = resolve_config(args)
    os.makedirs(cfg.run.out, exist_ok=True)
    setup_logging(args.log_level, log_dir=cfg.run.out)
    if args.command != "train":
        # train echoes the config next to its weights; other commands keep theirs apart
        save_run_config(cfg, os.path.join(cfg.run.out, f"{args.command}.cfg"))

    service = ExperimentService(cfg)
    if args.command == "train":
        result = service.train()
    elif args.command == "attack":
        result = service.attack(args.weights)
    elif args.command == "similarity":
        result = service.similarity(args.weights, untrained=args.untrained)
    elif args.command == "featuremaps":
        result = service.featuremaps(args.weights, args.index)
    elif args.command == "sweep":
        result = service.sweep()
    else:
        result = service.bench()

    if isinstance(result, dict) and "error" in result:
        print(f"[ERROR] {result['error']}", file=sys.stderr)
        return result["status_code"]
    logger.info(f"{args.command} done: {result['out']}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    setup_logging(args.log_level)
    try:
        return run(args)
    except NoiseLabError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
