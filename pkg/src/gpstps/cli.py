"""Command-line front end: run sweeps, compare finished runs, and inspect
saved policy snapshots."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    WORKERS_ENV_VAR,
    default_config,
    load_config,
    recompute_report,
    run_experiment,
    save_config,
)


def _print_report(report: dict) -> None:
    print(f"setting: {report['setting']}   seeds: {report['seeds']}")
    print(f"{'method':<16} {'mean_final':>10} {'std_final':>10} {'seconds':>8}")
    for method, doc in report["methods"].items():
        print(
            f"{method:<16} {doc['mean_final']:>10.3f} {doc['std_final']:>10.3f} "
            f"{doc['mean_wall_seconds']:>8.1f}"
        )
    print(f"best method: {report['best_method']}")
    print("pairwise paired t-tests on final returns:")
    for cmp in report["comparisons"]:
        print(
            f"  {cmp['a']} vs {cmp['b']}: diff={cmp['mean_diff']:+.3f} "
            f"t={cmp['t']:.3f} p={cmp['p']:.2e}"
        )


def _cmd_init_config(args: argparse.Namespace) -> int:
    config = default_config(args.setting, args.output_dir)
    save_config(config, args.path)
    print(f"wrote {args.path}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.output is not None:
        config = replace(config, output_dir=args.output)
    if args.seed_offset:
        config = replace(config, seeds=tuple(s + args.seed_offset for s in config.seeds))
    report = run_experiment(config, workers=args.workers, trace=args.trace)
    _print_report(report)
    print(f"artifacts in {config.output_dir}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    _print_report(recompute_report(args.dir))
    return 0


def _cmd_dump_policy(args: argparse.Namespace) -> int:
    run = Path(args.run)
    if args.iter is None:
        path = run / "policy_final.json"
    else:
        path = run / f"policy_iter{args.iter:03d}.json"
    if not path.exists():
        raise ValueError(f"no policy snapshot at {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpstps",
        description=(
            "Self-triggered policy search on the crane grasp-and-scatter "
            "simulation: run seeded sweeps, compare methods, inspect policies."
        ),
        epilog=f"Worker count defaults to ${WORKERS_ENV_VAR} (else 1).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init-config", help="write a default configuration file")
    p_init.add_argument("path", help="where to write the JSON configuration")
    p_init.add_argument("--setting", default="setting1", choices=["setting1", "setting2"])
    p_init.add_argument("--output-dir", default=None, help="output_dir to record in the config")
    p_init.set_defaults(handler=_cmd_init_config)

    p_run = sub.add_parser("run", help="train every configured (method, seed) pair")
    p_run.add_argument("--config", required=True, help="JSON configuration file")
    p_run.add_argument("--output", default=None, help="override the configured output_dir")
    p_run.add_argument(
        "--seed-offset", type=int, default=0, help="shift every configured seed by this amount"
    )
    p_run.add_argument("--workers", type=int, default=None, help="worker process count")
    p_run.add_argument(
        "--trace", action="store_true", help="also write a per-step episodes.csv per run"
    )
    p_run.set_defaults(handler=_cmd_run)

    p_cmp = sub.add_parser("compare", help="recompute the comparison from a finished sweep")
    p_cmp.add_argument("--dir", required=True, help="output directory of a finished run")
    p_cmp.set_defaults(handler=_cmd_compare)

    p_dump = sub.add_parser("dump-policy", help="print a saved policy snapshot")
    p_dump.add_argument("--run", required=True, help="run directory (<output>/<method>/seedNNN)")
    p_dump.add_argument(
        "--iter", type=int, default=None, help="snapshot iteration (default: final)"
    )
    p_dump.set_defaults(handler=_cmd_dump_policy)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
