"""Command-line front end: regenerate figures from finished sweep outputs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib.pyplot as plt

from .inputs import discover_runs
from .render import PlotSpec, plot_learning_curves, plot_policy


def _cmd_curves(args: argparse.Namespace) -> int:
    runs = discover_runs(args.input)
    if args.methods is not None:
        wanted = [m.strip() for m in args.methods.split(",") if m.strip()]
        missing = [m for m in wanted if m not in runs]
        if missing:
            raise ValueError(f"methods not found in {args.input}: {', '.join(missing)}")
        runs = {m: runs[m] for m in wanted}
    spec = PlotSpec(
        inputs=tuple(p for paths in runs.values() for p in paths),
        output=Path(args.output),
        labels=tuple(runs),
    )
    spec.validate()
    fig = plot_learning_curves(runs, spec.output)
    plt.close(fig)
    print(f"wrote {spec.output} ({len(runs)} methods)")
    return 0


def _cmd_policy(args: argparse.Namespace) -> int:
    spec = PlotSpec(inputs=(Path(args.input),), output=Path(args.output))
    spec.validate()
    fig = plot_policy(args.input, spec.output)
    plt.close(fig)
    print(f"wrote {spec.output}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpstps-plot",
        description="Regenerate figures from a finished sweep's output files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_curves = sub.add_parser("curves", help="learning curves with mean±std bands per method")
    p_curves.add_argument("--in", dest="input", required=True,
                          help="sweep output directory (contains <method>/seedNNN/)")
    p_curves.add_argument("--out", dest="output", required=True, help="image file to write")
    p_curves.add_argument("--methods", default=None,
                          help="comma-separated subset and ordering of methods")
    p_curves.set_defaults(handler=_cmd_curves)

    p_policy = sub.add_parser("policy", help="action probability and duration curves from a snapshot")
    p_policy.add_argument("--in", dest="input", required=True, help="policy snapshot JSON")
    p_policy.add_argument("--out", dest="output", required=True, help="image file to write")
    p_policy.set_defaults(handler=_cmd_policy)
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
