"""Command-line entry point: ``smartson run | match | replay``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from smartson.harness import ConfigError, emit_report, load_config, run_scenario
from smartson.matching import ParseError, ResourceSpec, load_trace, score_catalogue, trace_index
from smartson.platform import LogFormatError, check_protocol, parse_log
from smartson.scheduler import ProtocolDeadlock

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROTOCOL = 2


def _cmd_run(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        report = run_scenario(cfg)
    except ProtocolDeadlock as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        sys.stderr.write(exc.message_log)
        return EXIT_PROTOCOL
    for path in emit_report(report, args.format, args.out):
        print(path)
    return EXIT_OK


def _parse_request(text: str, index: dict[str, ResourceSpec]) -> ResourceSpec:
    if text in index:
        return index[text]
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6:
        raise ConfigError(f"request must be a trace title or 6 comma-separated numbers: {text!r}")
    try:
        return ResourceSpec.from_vector("request", parts)
    except ValueError as exc:
        raise ConfigError(f"bad request vector: {exc}") from exc


def _cmd_match(args: argparse.Namespace) -> int:
    try:
        trace = load_trace(args.trace)
    except (OSError, ParseError) as exc:
        raise ConfigError(str(exc)) from exc
    index = trace_index(trace)
    request = _parse_request(args.request, index)
    if args.config:
        cfg, _ = load_config(args.config)
        cfg.validate(set(index))
        if cfg.catalogue_mode != "explicit":
            raise ConfigError("match needs a config with explicit catalogues")
        pools = {f"provider-{i}": [index[t] for t in pool]
                 for i, pool in enumerate(cfg.catalogues, start=1)}
    else:
        pools = {"trace": trace}
    print("provider,title,score")
    for provider, pool in pools.items():
        for match in score_catalogue(request, pool):
            print(f"{provider},{match.resource.title},{match.score!r}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        with open(args.log, encoding="utf-8") as fh:
            entries = parse_log(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.log}: {exc}") from exc
    except LogFormatError as exc:
        print(f"invalid log: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    report = check_protocol(entries)
    for problem in report.problems:
        print(problem, file=sys.stderr)
    print(f"{report.messages} messages, {len(report.problems)} problems")
    return EXIT_OK if report.ok else EXIT_PROTOCOL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartson", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log agent activity")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its report")
    run.add_argument("--config", required=True,
                     help="JSON config file, or a bundled fixture: table3, table4")
    run.add_argument("--seed", type=int, help="override the config's seed")
    run.add_argument("--format", choices=("csv", "json"), default="json")
    run.add_argument("--out", type=Path, default=Path("."), help="output directory")
    run.set_defaults(func=_cmd_run)

    match = sub.add_parser("match", help="print similarity scores for one request")
    match.add_argument("--trace", help="trace CSV (default: the bundled one)")
    match.add_argument("--request", required=True, help="trace title or 6 comma-separated numbers")
    match.add_argument("--config", help="score against this config's provider pools instead")
    match.set_defaults(func=_cmd_match)

    replay = sub.add_parser("replay", help="re-validate a JSON-lines message log")
    replay.add_argument("--log", required=True)
    replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
