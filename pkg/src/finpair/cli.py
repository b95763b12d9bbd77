"""Command-line entry point wiring all pipeline stages."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date

from .corpus import CorpusError
from .forecasting import SplitError, TrainingError
from .gateway import GatewayError, MockMissError, ProviderError, TransportError
from .pipeline import ConfigError, Pipeline, load_run_config
from .retrieval import TrainingError as AdapterTrainingError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROVIDER = 2
EXIT_USAGE = 64

COMMANDS = (
    "ingest",
    "parse-filings",
    "classify",
    "finetune-embedding",
    "retrieve",
    "summarize",
    "build-dataset",
    "train",
    "evaluate",
    "ablate",
    "report",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D401 - argparse contract
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="finpair", description="Build and evaluate semantically paired text-price datasets.")
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="path to the JSON run config")
    common.add_argument("--provider", choices=("real", "mock"), default=None, help="override provider kind")
    common.add_argument("--ticker", action="append", default=None, help="restrict to a ticker (repeatable)")
    common.add_argument("--from", dest="date_from", default=None, help="ISO date lower bound")
    common.add_argument("--to", dest="date_to", default=None, help="ISO date upper bound")
    common.add_argument("--seed", action="append", type=int, default=None, help="training seed (repeatable)")
    common.add_argument("--out", default=None, help="override output directory")
    common.add_argument("--cache", default=None, help="override cache directory")
    common.add_argument("--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common])
        if name == "ablate":
            sub.add_argument("--plan", choices=("multilevel", "nsweep"), default="multilevel")
    return parser


def _run(args: argparse.Namespace) -> int:
    cfg = load_run_config(
        args.config,
        provider=args.provider,
        out_dir=args.out,
        cache_dir=args.cache,
        tickers=tuple(args.ticker or ()),
        date_from=date.fromisoformat(args.date_from) if args.date_from else None,
        date_to=date.fromisoformat(args.date_to) if args.date_to else None,
        seeds=tuple(args.seed) if args.seed else None,
    )
    pipeline = Pipeline(cfg)
    command = args.command
    if command == "ingest":
        report = pipeline.ingest()
        print(json.dumps(report, indent=2, sort_keys=True))
    elif command == "parse-filings":
        parsed = pipeline.parse_filings(force=True)
        print(f"parsed {len(parsed)} filings -> {cfg.out_dir / 'parsed_filings.jsonl'}")
    elif command == "classify":
        labeled = pipeline.classify_articles(force=True)
        print(f"classified {len(labeled)} articles -> {cfg.out_dir / 'articles_labeled.jsonl'}")
    elif command == "finetune-embedding":
        pipeline.finetune_adapter(force=True)
        print(f"adapter -> {cfg.out_dir / 'adapter.bin'}")
    elif command == "retrieve":
        _, retrieved = pipeline.retrieve(force=True)
        print(f"retrieved for {len(retrieved)} (ticker, day) pairs -> {cfg.out_dir / 'retrieval.jsonl'}")
    elif command == "summarize":
        path = pipeline.summarize()
        print(f"summaries -> {path}")
    elif command == "build-dataset":
        manifest = pipeline.build_dataset()
        print(json.dumps(manifest, indent=2, sort_keys=True))
    elif command == "train":
        _, checkpoint = pipeline.train_model()
        print(f"model -> {checkpoint}")
    elif command == "evaluate":
        result = pipeline.evaluate_model()
        print(json.dumps(result, indent=2, sort_keys=True))
    elif command == "ablate":
        report = pipeline.ablate(args.plan)
        failures = [c for c in report.cells if c.error is not None]
        print(
            f"{len(report.cells)} cells ({len(failures)} failed) -> "
            f"{cfg.out_dir / f'report_{args.plan}.csv'}"
        )
    elif command == "report":
        paths = pipeline.report()
        for path in paths:
            print(f"report -> {path}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown command {command!r}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _run(args)
    except (CorpusError, ConfigError, SplitError, TrainingError, AdapterTrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TransportError, ProviderError, MockMissError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except GatewayError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    raise SystemExit(main())
