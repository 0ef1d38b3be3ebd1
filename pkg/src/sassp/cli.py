"""Command-line entry point: ``attack run | toy-demo | report``."""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from . import harness
from .harness import ConfigError


def _cmd_run(args) -> int:
    try:
        config = harness.load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    try:
        bundle = harness.run_command(config, args.dataset, args.out, args.schema)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, harness.AllLinesMalformed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(harness.render_table(bundle), end="")
    return 0


def _cmd_toy_demo(args) -> int:
    config = harness.parse_config(harness.bundled_text("toy_demo.conf"))
    with tempfile.TemporaryDirectory() as tmp:
        corpus = Path(tmp) / "toy_corpus.jsonl"
        corpus.write_text(harness.bundled_text("toy_corpus.jsonl"), encoding="utf-8")
        bundle = harness.run_command(config, corpus, args.out, harness.SINGLE)
    print(harness.render_table(bundle), end="")
    return 0


def _cmd_report(args) -> int:
    try:
        bundle = harness.read_report(args.input)
    except FileNotFoundError:
        print(f"error: no report.json in {args.input}", file=sys.stderr)
        return 2
    table = harness.render_table(bundle)
    (Path(args.input) / "report.md").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attack", description="Word-substitution adversarial attacks")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-sample warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="attack a dataset and write a report bundle")
    run.add_argument("--config", required=True)
    run.add_argument("--dataset", required=True)
    run.add_argument("--schema", choices=(harness.SINGLE, harness.PAIR), default=harness.SINGLE)
    run.add_argument("--out", required=True)
    run.set_defaults(func=_cmd_run)

    demo = sub.add_parser("toy-demo", help="run the bundled toy fixture end to end")
    demo.add_argument("--out", required=True)
    demo.set_defaults(func=_cmd_toy_demo)

    rep = sub.add_parser("report", help="re-render report.md from report.json")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
