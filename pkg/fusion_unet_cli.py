import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from tools.ablation_runner import AblationExecutor
from tools.cost_report import cost_comparison, format_cost_report, resolve_model_config
from tools.dataset_builder import build_dataset
from tools.gradient_auditor import GradientAuditor
from tools.trainer import (cross_validate, evaluate_checkpoint, format_crossval_report, format_run_report,
                           prepare_splits, train_from_config)
from utils.config import ABLATION_ARMS, RunConfig
from utils.errors import AuditFailure, FusionUNetError, NumericalError
from utils.file_handlers import write_json_file
from utils.runtime import configure_logging

logger = logging.getLogger("fusion_unet")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class CliParser(argparse.ArgumentParser):
    """Usage errors exit 1; exit 2 is reserved for numeric failures."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_shared_flags(parser: argparse.ArgumentParser, default=None) -> None:
    parser.add_argument("--config", default=default, help="run config file (UTF-8 JSON)")
    parser.add_argument("--seed", type=int, default=default, help="override the training and data seed")
    parser.add_argument("--out-dir", default=default, help="directory for reports, metrics and checkpoints")
    parser.add_argument("--log-level", default=default,
                        help="DEBUG, INFO, WARNING or ERROR (default: $FUSION_UNET_LOG_LEVEL or INFO)")


def build_parser() -> CliParser:
    parser = CliParser(prog="fusion-unet", description="FusionU-Net training, evaluation and auditing")
    _add_shared_flags(parser)
    # after the subcommand, a flag only overrides what was given before it
    shared = argparse.ArgumentParser(add_help=False)
    _add_shared_flags(shared, default=argparse.SUPPRESS)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    def add(name: str, help_text: str) -> CliParser:
        return commands.add_parser(name, help=help_text, parents=[shared])

    gen = add("gen-data", "write a synthetic dataset directory")
    gen.add_argument("--count", type=int, help="number of samples (default: n_train + n_val + n_test)")

    add("train", "train one model and keep the best-validation checkpoint")

    ev = add("eval", "score a checkpoint on held-out data")
    ev.add_argument("checkpoint", help="FUNW checkpoint file")

    ablate = add("ablate", "train every ablation arm over several seeds")
    ablate.add_argument("--arms", nargs="+", choices=ABLATION_ARMS, help="subset of arms to run")

    add("gradcheck", "run the finite-difference gradient audit")

    info = add("info", "parameters, MACs and FLOPs against the reference band")
    info.add_argument("--preset", choices=("desk", "paper"), help="model preset when no --config is given")
    info.add_argument("--time", action="store_true", help="also measure CPU forward throughput")
    info.add_argument("--repeats", type=int, default=3, help="timed forward passes for --time")

    crossval = add("crossval", "repeated k-fold cross-validation")
    crossval.add_argument("--folds", type=int, default=5)
    crossval.add_argument("--repeats", type=int, default=1)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    run = RunConfig.load(args.config)
    return run.with_seed(args.seed) if args.seed is not None else run


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out_dir or default)


def cmd_gen_data(args: argparse.Namespace) -> int:
    run = _run_config(args)
    out = _out_dir(args, "data/synthetic")
    count = args.count if args.count is not None else run.data.n_train + run.data.n_val + run.data.n_test
    if count < 1:
        raise ValueError(f"--count must be positive, got {count}")
    manifest = build_dataset(run.data.synth, count, out)
    print(f"Wrote {count} samples to {out} (manifest {manifest})")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    out = _out_dir(args, "runs/train")
    _, report = train_from_config(_run_config(args), out)
    print(format_run_report(report, out))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    run = _run_config(args) if args.config is not None else None
    result = evaluate_checkpoint(args.checkpoint, run)
    print(f"Dice {result.dice:.4f}, IoU {result.iou:.4f}")
    if args.out_dir:
        write_json_file(Path(args.out_dir) / "eval.json", {"checkpoint": str(args.checkpoint), "dice": result.dice,
                                                           "iou": result.iou, "per_class_dice": result.per_class_dice})
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    executor = AblationExecutor(_run_config(args))
    rows = executor.run_ablation(args.arms)
    executor.write(rows, _out_dir(args, "runs/ablation"))
    print(executor.generate_detailed_report(rows))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    auditor = GradientAuditor(seed=args.seed or 0)
    results, missing = auditor.run()
    print(GradientAuditor.generate_detailed_report(results, missing))
    if missing or not all(r.passed for r in results):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_info(args: argparse.Namespace) -> int:
    main_cost, alternative, throughput = cost_comparison(resolve_model_config(args.config, args.preset), args.time,
                                                         args.repeats)
    print(format_cost_report(main_cost, alternative, throughput))
    if args.out_dir:
        write_json_file(Path(args.out_dir) / "info.json", {"model": main_cost.to_dict(),
                                                           "alternative": alternative.to_dict()})
    return EXIT_OK


def cmd_crossval(args: argparse.Namespace) -> int:
    run = _run_config(args)
    splits = prepare_splits(run)
    report = cross_validate(run.model, run.train, splits.train + splits.val, args.folds, args.repeats)
    if args.out_dir:
        write_json_file(Path(args.out_dir) / "crossval.json", report.to_dict())
    print(format_crossval_report(report))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "info": cmd_info,
    "crossval": cmd_crossval,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ValueError as e:
        parser.error(str(e))
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, AuditFailure) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_NUMERIC
    except (FusionUNetError, FileNotFoundError, ValueError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
