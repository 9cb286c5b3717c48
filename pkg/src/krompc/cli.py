"""``krompc`` command line.

    krompc collect --config exp.json --out-dir runs/a
    krompc fit     --config exp.json --degree=3
    krompc run     --config exp.json --surrogate=localized --compare='["switched"]'
    krompc sweep   --config exp.json --jobs 4
    krompc audit   runs/a

Any config field can be overridden with ``--field=value`` (values are parsed
as JSON when possible, else taken as strings; ``--plant_params.viscosity=0.02``
reaches nested entries).  Exit codes: 0 success, 2 invalid input, 3 numerical
failure.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import experiments
from ._validation import NumericalError

log = logging.getLogger("krompc")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(extra):
    """``['--a=1', '--b.c=x']`` -> ``{'a': 1, 'b.c': 'x'}``."""
    out = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ValueError(f"unrecognized argument {item!r} (overrides take the form --key=value)")
        key, value = item[2:].split("=", 1)
        if not key:
            raise ValueError(f"empty override key in {item!r}")
        out[key] = _parse_value(value)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="krompc", description="Koopman reduced-order MPC experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("collect", "simulate the plant and write snapshot files"),
                       ("fit", "fit Koopman models and ensembles"),
                       ("run", "closed-loop MPC runs and summary"),
                       ("sweep", "degree x data-volume grid")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--jobs", type=int)
    p = sub.add_parser("audit", help="recompute summary metrics from exported tables")
    p.add_argument("path", nargs="?", default=None)
    p.add_argument("--config")
    p.add_argument("--out-dir")
    return parser


def _config(args, extra):
    overrides = parse_overrides(extra)
    for key in ("seed", "out_dir", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return experiments.load_config(args.config, overrides)


def _emit(data):
    print(json.dumps(data, indent=2, sort_keys=True, default=float))


def _dispatch(args, extra):
    if args.command == "audit":
        if extra:
            raise ValueError(f"audit takes no overrides, got {extra}")
        path = args.path or args.out_dir
        if path is None:
            path = experiments.load_config(args.config).out_dir if args.config else "runs"
        issues = experiments.audit(path)
        for msg in issues:
            print(f"MISMATCH {msg}")
        if issues:
            return EXIT_INVALID
        print(f"audit ok: {path}")
        return EXIT_OK
    cfg = _config(args, extra)
    if args.command == "collect":
        paths = experiments.collect(cfg)
        _emit({"snapshot_files": [str(p) for p in paths]})
    elif args.command == "fit":
        bank, ensembles = experiments.fit(cfg)
        _emit({"k": bank.dictionary.size, "control_values": bank.control_values.tolist(),
               "ensembles": {k: str(v) for k, v in ensembles.items()}})
    elif args.command == "run":
        _emit(experiments.run(cfg))
    elif args.command == "sweep":
        rows, _ = experiments.sweep(cfg)
        failed = [r for r in rows if r["status"] != "ok"]
        _emit({"cells": len(rows), "failed": len(failed)})
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args, extra)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
