"""Command-line interface.

Subcommands:
  run        -- run a configured benchmark experiment and write traces
  suggest    -- ask/tell: propose the next batch from a state file
  update     -- ask/tell: record evaluation results for the pending batch
  benchmarks -- list the built-in objectives

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 ask/tell state mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import benchmarks
from .errors import (
    ConfigError,
    InitializationError,
    NumericalError,
    StateFileError,
    StateMismatchError,
)
from .harness import ExperimentConfig, run_experiment, suggest, update

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISMATCH = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atsbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a benchmark experiment")
    run_p.add_argument("--config", required=True, help="JSON experiment config file")
    run_p.add_argument("--seed", type=int, default=None, help="override root_seed")
    run_p.add_argument("--out", default=None, help="output directory for traces")
    run_p.add_argument("--workers", type=int, default=1, help="parallel repetitions")

    sug_p = sub.add_parser("suggest", help="propose the next batch from a state file")
    sug_p.add_argument("--state", required=True)

    upd_p = sub.add_parser("update", help="record results for the pending batch")
    upd_p.add_argument("--state", required=True)
    upd_p.add_argument("--results", required=True, help="JSON results file")

    bench_p = sub.add_parser("benchmarks", help="built-in objective utilities")
    bench_sub = bench_p.add_subparsers(dest="action", required=True)
    bench_sub.add_parser("list", help="list built-in benchmark functions")
    return parser


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{what} {path!r} is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc


def _cmd_run(args) -> int:
    data = _load_json(args.config, "config file")
    if args.seed is not None:
        data["root_seed"] = args.seed
    if args.out is not None:
        data["out_dir"] = args.out
    cfg = ExperimentConfig.from_dict(data)
    if cfg.benchmark == "external":
        raise ConfigError("the run command needs a built-in benchmark; use suggest/update for external objectives")
    trace = run_experiment(cfg, n_workers=args.workers)
    out_dir = cfg.out_dir or "."
    trace.save(out_dir)
    n_failed = sum(1 for rep in trace.repetitions if rep.failed)
    final = trace.aggregate()[-1]
    if final["n_reps"] == 0:
        print(f"all {cfg.n_repetitions} repetitions failed; traces in {out_dir}")
        return EXIT_NUMERICAL
    print(
        f"{cfg.strategy} on {cfg.benchmark}: mean best {final['mean_best']:.6g} "
        f"+/- {final['se_best']:.2g} over {final['n_reps']} repetitions "
        f"({n_failed} failed); traces in {out_dir}"
    )
    return EXIT_OK


def _cmd_suggest(args) -> int:
    points = suggest(args.state)
    print(json.dumps({"points": [list(p) for p in points]}))
    return EXIT_OK


def _cmd_update(args) -> int:
    data = _load_json(args.results, "results file")
    if "evaluations" not in data:
        raise ConfigError("results file must hold an 'evaluations' list of {x, y} objects")
    pairs = [(entry["x"], entry["y"]) for entry in data["evaluations"]]
    update(args.state, pairs)
    print(json.dumps({"recorded": len(pairs)}))
    return EXIT_OK


def _cmd_benchmarks(args) -> int:
    for name in sorted(benchmarks.names()):
        spec = benchmarks.get(name)
        bounds = ", ".join(f"[{lo:g}, {hi:g}]" for lo, hi in spec.domain)
        print(f"{spec.name}: d={spec.dim}, domain {bounds}, min {spec.known_minimum:g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "suggest": _cmd_suggest,
        "update": _cmd_update,
        "benchmarks": _cmd_benchmarks,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, StateFileError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, InitializationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StateMismatchError as exc:
        print(f"state mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
