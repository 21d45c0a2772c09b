"""Command line entry point: ``dflgcrf generate|fit|predict|sweep|report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineSpec, FittedBaseline, Kind, fit_baseline
from .data import DataError, load_dataset
from .dfl import DflArch, DflModel, DflOptions, dfl_predict, fit_dfl
from .harness import SweepConfig, emit_report, load_report, run_sweep, save_report
from .optim import NumericalError
from .synth import ConfigError, GeneratorConfig, generate_network, write_network

log = logging.getLogger("dflgcrf")

MODEL_CHOICES = ["dfl"] + [k.value.lower() for k in Kind]
MODEL_FILE = "model.json"
PREDICTION_FILE = "predictions.csv"
REPORT_FILE = "report.json"
GLOBAL_DEFAULTS = {"seed": None, "config": None, "out": ".", "verbose": False}


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> None:
    cfg = GeneratorConfig.from_dict(_read_json(args.config)) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds, truth = generate_network(cfg)
    paths = write_network(ds, truth, _out_dir(args), split=args.split)
    for p in paths.values():
        log.info("wrote %s", p)


def _load_model(path):
    d = _read_json(path)
    if d.get("kind") == "DFL_GCRF":
        return DflModel.from_dict(d)
    return FittedBaseline.from_dict(d)


def cmd_fit(args) -> None:
    train = load_dataset(args.data)
    hp = _read_json(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else 0
    if args.model == "dfl":
        arch_keys, opt_keys = DflArch.__dataclass_fields__, DflOptions.__dataclass_fields__
        unknown = set(hp) - set(arch_keys) - set(opt_keys)
        if unknown:
            raise ConfigError(f"unknown DFL settings: {sorted(unknown)}")
        a = {k: v for k, v in hp.items() if k in arch_keys}
        o = {k: v for k, v in hp.items() if k in opt_keys}
        for key, val in (("h", args.h), ("gamma", args.gamma), ("neighbor_k", args.k)):
            if val is not None:
                a[key] = val
        for key, val in (("maxiter", args.maxiter), ("gtol", args.gtol)):
            if val is not None:
                o[key] = val
        a["seed"] = seed
        model = fit_dfl(train, DflArch(**a), DflOptions(**o))
    else:
        kind = next(k for k in Kind if k.value.lower() == args.model)
        model = fit_baseline(BaselineSpec(kind, hp, seed), train)
    path = _out_dir(args) / MODEL_FILE
    _write_json(model.to_dict(), path)
    log.info("wrote %s", path)


def cmd_predict(args) -> None:
    model = _load_model(args.model_file)
    ds = load_dataset(args.data)
    path = _out_dir(args) / PREDICTION_FILE
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "time", "prediction"])
        for t, fm in enumerate(ds.features):
            mu = dfl_predict(model, fm) if isinstance(model, DflModel) else model.predict(fm)
            if not np.all(np.isfinite(mu)):
                raise NumericalError("non-finite prediction")
            for node, val in zip(ds.node_ids, mu):
                w.writerow([node, args.start_time + t, repr(float(val))])
    log.info("wrote %s", path)


def cmd_sweep(args) -> int:
    if not args.config:
        raise UsageError("sweep needs --config")
    cfg = SweepConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    report = run_sweep(cfg)
    out = _out_dir(args)
    save_report(report, out / REPORT_FILE)
    for p in emit_report(report, out):
        log.info("wrote %s", p)
    if report.n_failed:
        print(f"dflgcrf: {report.n_failed} sweep cell(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> None:
    report = load_report(args.report)
    for p in emit_report(report, _out_dir(args)):
        log.info("wrote %s", p)


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand. SUPPRESS keeps a
    # subcommand's unset flag from overwriting one given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed override")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: current)")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="log progress")

    parser = argparse.ArgumentParser(prog="dflgcrf", parents=[common],
                                     description="GCRF and deep-feature GCRF for partially observed networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic network")
    p.add_argument("--split", type=int, default=None, help="number of training steps (default T-1)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", parents=[common], help="fit one model on a dataset")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES, type=str.lower)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--h", type=int, help="DFL embedding width")
    p.add_argument("--gamma", type=float, help="DFL hidden-layer sizing constant")
    p.add_argument("--k", type=int, help="DFL kernel neighbors (default: full kernel)")
    p.add_argument("--maxiter", type=int, help="DFL iteration cap")
    p.add_argument("--gtol", type=float, help="DFL gradient tolerance")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="predict every snapshot of a dataset")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--start-time", type=int, default=1, help="time label of the first snapshot")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", parents=[common], help="run a missingness sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="emit CSV and summary files from a report")
    p.add_argument("--report", required=True, help=f"{REPORT_FILE} written by sweep")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, val in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return args.func(args) or 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dflgcrf: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ConfigError, NumericalError, OSError, ValueError, KeyError) as exc:
        print(f"dflgcrf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
