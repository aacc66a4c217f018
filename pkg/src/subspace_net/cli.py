"""Command-line entry points.

    ssn validate <config.json>          check a config against the schema
    ssn run <config.json>               execute the configured experiment
    ssn predict --model M --features F --out P
                                        batch predictions from a saved model

Exit codes: 0 ok, 1 config error, 2 IO error, 3 numeric failure in every
cell. The SSN_THREADS environment variable caps the per-cell worker pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .config import load_config, validate_config_dict
from .data import parse_numeric_csv
from .errors import ConfigError, ModelFormatError, ParseError, SubspaceNetError
from .experiments import run_experiment
from .network import forward_batch, load_model


def _cmd_validate(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"{args.config}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}",
              file=sys.stderr)
        return 1
    problems = validate_config_dict(obj)
    if problems:
        for problem in problems:
            print(f"{args.config}: {problem}", file=sys.stderr)
        return 1
    print("OK")
    return 0


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return run_experiment(cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _cmd_predict(args) -> int:
    try:
        net = load_model(args.model)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ModelFormatError as exc:
        print(f"error: {args.model}: {exc}", file=sys.stderr)
        return 2
    try:
        _, x = parse_numeric_csv(args.features)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if x.shape[1] != net.input_dim:
        print(f"error: model expects {net.input_dim} features, "
              f"{args.features} has {x.shape[1]}", file=sys.stderr)
        return 2
    preds = forward_batch(net, x)
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"target_{j}" for j in range(net.task_dim)])
            for row in preds:
                writer.writerow([f"{v:.17g}" for v in row])
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ssn",
        description="Multi-task censored regression with low-rank subspace layers")
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a config file")
    p_validate.add_argument("config")
    p_validate.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="run the configured experiment")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_predict = sub.add_parser("predict", help="predict from a saved model")
    p_predict.add_argument("--model", required=True)
    p_predict.add_argument("--features", required=True)
    p_predict.add_argument("--out", required=True)
    p_predict.set_defaults(func=_cmd_predict)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SubspaceNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
