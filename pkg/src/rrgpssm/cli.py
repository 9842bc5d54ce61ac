"""Command-line front end: ``rrgpssm {learn,forecast,eval,bench1,bench2,run}``.

Every :class:`~rrgpssm.experiments.ExperimentConfig` field is a flag
(``--half-widths 4``, ``--K 200``); ``--config`` reads a JSON file (or a run
manifest) and explicit flags override it.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import __version__
from .experiments import ConfigError, ExperimentConfig, load_config, run_experiment

SUBCOMMANDS = {
    "learn": ("learn", "learn a model from a CSV file"),
    "forecast": ("forecast", "k-step forecasts from a stored chain"),
    "eval": ("eval", "evaluate a stored chain on a CSV file"),
    "bench1": ("benchmark1", "tanh benchmark (posterior of f)"),
    "bench2": ("benchmark2", "kink benchmark (results-table row)"),
    "run": (None, "run whatever mode the --config file names"),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or run manifest")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "mode":
            continue
        meta = dict(f.metadata)
        flag = "--" + f.name.replace("_", "-")
        kw = {"help": meta.pop("help"), "default": argparse.SUPPRESS, "dest": f.name}
        typ = meta.pop("type", str)
        if typ is bool:
            kw["action"] = argparse.BooleanOptionalAction
        else:
            kw["type"] = typ
            kw.update(meta)
        p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrgpssm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in SUBCOMMANDS.items():
        _add_config_flags(sub.add_parser(name, help=help_, description=help_))
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    mode = SUBCOMMANDS[args.command][0] or values.get("mode")
    if mode is None:
        raise ConfigError("'run' needs a --config naming the mode")
    values = {**values, **flags}
    values.pop("mode", None)
    return ExperimentConfig.for_mode(mode, **values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.validate()
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        parser.error(str(e))
    try:
        metrics = run_experiment(cfg)
    except ConfigError as e:
        parser.error(str(e))
    except Exception as e:  # surfaced with context, nonzero exit
        print(f"rrgpssm {args.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    shown = {k: metrics[k] for k in ("rmse", "ll", "T_e", "protocol") if k in metrics}
    print(json.dumps(shown))
    if "summary" in metrics:
        row = metrics["summary"]
        print(f"{row['method']}: RMSE {row['rmse']:.3f}, LL {row['ll']:.3f}, "
              f"train {row['train_time_min']:.2f} min, test {row['test_time_s']:.2f} s")
    print(f"outputs in {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
