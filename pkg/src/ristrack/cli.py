"""Command-line entry point: ``ristrack <subcommand> [options]``.

Exit status is 0 on success. Failures print one JSON object to stderr
(``{"error": ..., "message": ..., "problems": [...]}``) and exit nonzero:
2 for usage/config errors, 3 for data/container errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from . import experiments
from .config import ConfigError, load_config
from .dataio import ContainerError, TrajectoryDataError, TrajectoryParseError, inspect_container


def _global_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a subcommand from overwriting a value given before it
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (u64)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--profile", choices=("desk", "paper"), default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ristrack", description=__doc__.splitlines()[0])
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common)
    sub.add_parser("train-report", parents=[common], help="RMSE vs prefix length and batch size")
    sub.add_parser("variance-report", parents=[common], help="tau1/tau2 dispersion per predictor")
    tr = sub.add_parser("tracking-report", parents=[common], help="per-step tracking and forecast table")
    tr.add_argument("--save-model", help="also write the trained model/ensemble container here")
    se = sub.add_parser("se-sweep", parents=[common], help="spectral efficiency over K and RIS size")
    se.add_argument("--sweep", choices=experiments.SWEEPS + ("all",), default="all")
    se.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    sub.add_parser("oracle-gen", parents=[common], help="export the oracle phase trajectory CSV")
    model = sub.add_parser("model", help="model container utilities")
    msub = model.add_subparsers(dest="model_command", required=True)
    ins = msub.add_parser("inspect", help="print a container summary as JSON")
    ins.add_argument("path")
    return parser


def _fail(kind: str, message: str, code: int, problems=()) -> int:
    payload = {"error": kind, "message": message}
    if problems:
        payload["problems"] = list(problems)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _run(args) -> int:
    if args.command == "model":
        print(json.dumps(inspect_container(args.path), indent=2, sort_keys=True))
        return 0
    cfg = load_config(getattr(args, "config", None), getattr(args, "profile", None),
                      getattr(args, "seed", None), getattr(args, "out", None))
    if args.command == "train-report":
        outputs = experiments.train_report(cfg)
    elif args.command == "variance-report":
        outputs = experiments.variance_report(cfg)
    elif args.command == "tracking-report":
        outputs = experiments.tracking_report(cfg, args.save_model)
    elif args.command == "se-sweep":
        sweeps = experiments.SWEEPS if args.sweep == "all" else (args.sweep,)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError(["--jobs must be >= 1"])
        outputs = experiments.se_sweep(cfg, sweeps, args.jobs)
    else:
        outputs = experiments.oracle_gen(cfg)
    for path in experiments.write_outputs(outputs, cfg["output_dir"]):
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _run(args)
    except ConfigError as exc:
        return _fail("config", "invalid configuration", 2, exc.problems)
    except (ContainerError, TrajectoryParseError, TrajectoryDataError) as exc:
        return _fail(type(exc).__name__, str(exc), 3)
    except OSError as exc:
        return _fail("io", str(exc), 3)
    except Exception as exc:  # noqa: BLE001 - last-resort structured diagnostic
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
