"""Command line interface.

``flatff run`` executes the experiment matrix and writes the report
(summary CSV, per-run logs, models, error CSVs, tables, figures);
``flatff table`` re-renders the tables and figures from stored artifacts.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import experiment, plotting
from .errors import ConfigError
from .flatness import Strategy


def _parse_only(values: list[str]) -> set[tuple[str, Strategy]]:
    pairs = set()
    for value in values:
        for item in value.split(","):
            try:
                dist_set, strat = item.split(":")
                pairs.add((dist_set.strip(), Strategy(strat.strip())))
            except ValueError:
                raise SystemExit(f"error: --only expects SET:STRATEGY, got {item!r}")
    return pairs


def _cmd_run(args) -> int:
    if args.config is not None:
        try:
            cfg = experiment.parse_config(args.config)
        except ConfigError as exc:
            print(f"error: {args.config}: {exc}", file=sys.stderr)
            return 2
    else:
        cfg = experiment.ExperimentConfig()
    if args.feedback is not None:
        modes = {"on": (True,), "off": (False,), "both": (False, True)}[args.feedback]
        cfg = replace(cfg, feedback_modes=modes)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    cell_filter = _parse_only(args.only) if args.only else None

    result = experiment.run_matrix(
        cfg, render_figures=not args.no_figures, cell_filter=cell_filter
    )
    print(result.format_tables())
    print(f"artifacts written to {result.output_dir}")
    return 1 if result.any_failed else 0


def _cmd_table(args) -> int:
    try:
        tables = experiment.load_summary(args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = "\n".join(tables[fb].format() for fb in sorted(tables))
    print(text)
    with open(f"{args.out}/tables.txt", "w") as fh:
        fh.write(text)
    n = plotting.render_figures_from_artifacts(args.out)
    if n:
        print(f"re-rendered {n} figures under {args.out}/figures")
    return 1 if any(t.any_failed for t in tables.values()) else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flatff",
        description="Feedforward disturbance-compensation benchmark on a planar multirotor.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment matrix")
    p_run.add_argument("--config", help="experiment config file (defaults used if omitted)")
    p_run.add_argument(
        "--only",
        action="append",
        metavar="SET:STRATEGY",
        help="restrict to one or more cells, e.g. B:FF4 (repeatable, comma-separable)",
    )
    p_run.add_argument("--feedback", choices=("on", "off", "both"), help="override feedback modes")
    p_run.add_argument("--out", help="override the output directory")
    p_run.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_run.set_defaults(func=_cmd_run)

    p_table = sub.add_parser("table", help="re-render tables and figures from stored artifacts")
    p_table.add_argument("--out", required=True, help="output directory of a previous run")
    p_table.set_defaults(func=_cmd_table)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
