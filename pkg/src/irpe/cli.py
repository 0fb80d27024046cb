"""Command-line entry point: ``irpe --config run.yaml [--mode ...]``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from .harness import MODES, ConfigError, ExperimentError, load_config, run_experiment, with_overrides


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="irpe", description="Run an IRPE / RPE estimation experiment.")
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--mode", choices=MODES, help="override estimator.mode")
    p.add_argument("--seed", type=int, help="override simulation.seed")
    p.add_argument("--cycles", type=int, help="override estimator.cycles")
    p.add_argument("--out", help="override output.directory")
    return p


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return 2 if kind == "config" else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = with_overrides(load_config(args.config), args.mode, args.seed, args.cycles, args.out)
    except (OSError, ConfigError, ValueError) as exc:
        return _fail("config", str(exc))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_experiment(cfg)
    except ExperimentError as exc:
        return _fail("experiment", str(exc), detail=exc.summary.get("error"))
    except (ConfigError, ValueError) as exc:
        return _fail("config", str(exc))
    s = res.summary
    line = {"mode": s["mode"], "x_final": [float(v) for v in s["x_final"]], "trace": str(res.trace_path)}
    if "equivalence" in s:
        line["max_rel_dev"] = s["equivalence"]["max_rel_dev"]
    print(json.dumps(line))
    return 0


if __name__ == "__main__":
    sys.exit(main())
