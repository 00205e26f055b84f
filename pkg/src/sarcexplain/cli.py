"""Command-line entry point: ``sarcexplain <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .dataset_io import DatasetError, Sample, Variety, dataset_stats, load_dataset
from .prompts import OriginUnsupportedVariety, Strategy, build_prompt
from .report import render_figures, render_report, render_stats
from .runner import ConfigDigestMismatch, NoPriorRun, load_report, resume, run_experiment
from .verdicts import EmptyCompletion, parse_verdict

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DEGRADED = 3

FORMAT_CHOICES = ("md", "markdown", "csv", "json")


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        agent_changes = {}
        if args.max_steps is not None:
            if args.max_steps < 1:
                raise ConfigError("--max-steps", "must be >= 1")
            agent_changes["max_steps"] = args.max_steps
        if args.search_backend is not None:
            agent_changes["search_backend"] = args.search_backend
        if agent_changes:
            cfg = dataclasses.replace(cfg, agent=dataclasses.replace(cfg.agent, **agent_changes))
        if args.judge_template is not None:
            if not Path(args.judge_template).is_file():
                raise ConfigError("--judge-template", f"file {args.judge_template} does not exist")
            cfg = dataclasses.replace(cfg, judge_template=Path(args.judge_template))
        if args.run_dir is not None:
            cfg = dataclasses.replace(cfg, run_dir=Path(args.run_dir))
        entry = resume if args.resume else run_experiment
        report = entry(cfg, offline=args.offline)
    except (ConfigError, ConfigDigestMismatch, NoPriorRun) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(render_report(report, "markdown"))
    print(f"run directory: {cfg.resolved_run_dir()}", file=sys.stderr)
    if report.manifest.get("degraded"):
        print("run is degraded: too many per-sample failures", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    expected = Variety.parse(args.variety) if args.variety else None
    rows = []
    for path in args.dataset:
        try:
            ds = load_dataset(path, expected)
            rows.append((ds.name, dataset_stats(ds)))
        except (OSError, DatasetError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    sys.stdout.write(render_stats(rows, args.format))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    try:
        report = load_report(args.source)
    except FileNotFoundError:
        print(f"{args.source} has no report.json", file=sys.stderr)
        return EXIT_FAILURE
    sys.stdout.write(render_report(report, args.format))
    if args.figures:
        for path in render_figures(report, Path(args.source) / "figures"):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_parse(args: argparse.Namespace) -> int:
    text = sys.stdin.read()
    try:
        verdict = parse_verdict(text, Strategy.parse(args.strategy))
    except EmptyCompletion as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(verdict.to_dict(), ensure_ascii=False))
    return EXIT_OK


def _cmd_explain_prompt(args: argparse.Namespace) -> int:
    if args.dataset:
        ds = load_dataset(args.dataset)
        matches = [s for s in ds.samples if s.id == args.id] if args.id else list(ds.samples[:1])
        if not matches:
            print(f"no sample {args.id!r} in {args.dataset}", file=sys.stderr)
            return EXIT_FAILURE
        sample = matches[0]
    elif args.text:
        sample = Sample(id="cli", text=args.text, variety=Variety.parse(args.variety))
    else:
        print("give --text or --dataset", file=sys.stderr)
        return EXIT_FAILURE
    try:
        bundle = build_prompt(Strategy.parse(args.strategy), sample)
    except OriginUnsupportedVariety as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    sys.stdout.write(bundle.render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarcexplain", description="Prompting-strategy harness for explainable sarcasm detection."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    strategies = [s.value for s in Strategy]

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true", help="complete a partial run")
    p.add_argument("--offline", action="store_true", help="replay cache only, no network")
    p.add_argument("--run-dir", help="override the run directory")
    p.add_argument("--max-steps", type=int, help="KG agent step budget")
    p.add_argument("--search-backend", choices=("live", "fixtures"))
    p.add_argument("--judge-template", help="judge prompt template file")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("stats", help="dataset statistics table")
    p.add_argument("--dataset", required=True, nargs="+")
    p.add_argument("--variety", help="expected variety (us, au, in)")
    p.add_argument("--format", choices=FORMAT_CHOICES, default="md")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("report", help="render the report of a finished run")
    p.add_argument("--from", dest="source", required=True, help="run directory")
    p.add_argument("--format", choices=FORMAT_CHOICES, default="md")
    p.add_argument("--figures", action="store_true", help="also (re)write figures/*.png")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("parse", help="parse a completion from stdin into a verdict")
    p.add_argument("--strategy", choices=strategies, default="zero")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("explain-prompt", help="print the rendered prompt for a sample")
    p.add_argument("--strategy", choices=strategies, required=True)
    p.add_argument("--text")
    p.add_argument("--variety", default="us")
    p.add_argument("--dataset")
    p.add_argument("--id")
    p.set_defaults(func=_cmd_explain_prompt)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
