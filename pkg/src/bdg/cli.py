"""``bdg`` command-line entry point.

Exit codes: 0 success/all pass, 1 test failures, 2 errors or diagnostics,
64 usage errors.  Progress goes to stderr; artifacts only to explicit paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from . import __version__, harness
from .env import get_env
from .errors import BdgError, UsageError
from .gherkin import Severity
from .modelio import atomic_write
from .netenv import EnvServer
from .report import to_json, to_junit_xml

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2
EXIT_USAGE = 64

log = logging.getLogger("bdg")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _port(text: str) -> int:
    value = _seed(text)
    if value > 65535:
        raise argparse.ArgumentTypeError("port must be <= 65535")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdg", description="Behaviour-driven game testing with reinforcement-learning agents.")
    parser.add_argument("--version", action="version", version=f"bdg {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug output on stderr")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("parse", help="parse feature files and print an AST summary")
    p.add_argument("files", nargs="+", metavar="FILE")

    p = sub.add_parser("lint", help="report structural diagnostics")
    p.add_argument("files", nargs="+", metavar="FILE")

    p = sub.add_parser("train", help="train one model per scenario")
    p.add_argument("file", metavar="FILE")
    p.add_argument("--scenario", metavar="NAME")
    p.add_argument("--trainer", metavar="ID", help="override the scenario's @trainer tag")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--budget", type=_positive_int, metavar="N", help="environment-step budget (>= 1)")
    p.add_argument("--out", default="models", metavar="DIR")
    p.add_argument("--config", metavar="TOML", help="run configuration (default: $BDG_CONFIG)")
    p.add_argument("--jobs", type=_positive_int, metavar="N", help="worker processes (default: CPU count)")

    p = sub.add_parser("test", help="evaluate trained models against the scenarios' assertions")
    p.add_argument("file", metavar="FILE")
    p.add_argument("--models", default="models", metavar="DIR")
    p.add_argument("--scenario", metavar="NAME")
    p.add_argument("--episodes", type=_positive_int, default=harness.DEFAULT_EPISODES, metavar="K")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--report-xml", metavar="PATH")
    p.add_argument("--report-json", metavar="PATH")
    p.add_argument("--config", metavar="TOML", help="run configuration (default: $BDG_CONFIG)")
    p.add_argument("--jobs", type=_positive_int, metavar="N", help="worker processes (default: CPU count)")
    p.add_argument("--force", action="store_true", help="use models whose scenario fingerprint differs")

    p = sub.add_parser("oracle", help="exhaustive feasibility search (deterministic Flappy Bird only)")
    p.add_argument("file", metavar="FILE")
    p.add_argument("--scenario", required=True, metavar="NAME")
    p.add_argument("--max-ticks", type=_positive_int, metavar="N")
    p.add_argument("--config", metavar="TOML", help="run configuration (default: $BDG_CONFIG)")

    p = sub.add_parser("serve-env", help="serve an environment over the JSON-lines TCP protocol")
    p.add_argument("--env", required=True, metavar="ID")
    p.add_argument("--port", type=_port, default=7777)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def _cmd_parse(args: argparse.Namespace) -> int:
    code = EXIT_OK
    for path, ast, diags in harness.iter_diagnostics(args.files):
        if ast is None:
            for d in diags:
                print(d, file=sys.stderr)
            code = EXIT_ERROR
            continue
        summary = {"file": str(path), **harness.summarize_ast(ast)}
        print(json.dumps(summary, indent=2))
    return code


def _cmd_lint(args: argparse.Namespace) -> int:
    code = EXIT_OK
    for path, _, diags in harness.iter_diagnostics(args.files):
        for d in diags:
            print(d)
            if d.severity is Severity.ERROR:
                code = EXIT_ERROR
        if not diags:
            log.info("%s: ok", path)
    return code


def _cmd_train(args: argparse.Namespace) -> int:
    results = harness.train_mode(
        args.file,
        args.out,
        scenario=args.scenario,
        seed=args.seed,
        budget=args.budget,
        trainer=args.trainer,
        config_path=args.config,
        jobs=args.jobs,
    )
    code = EXIT_OK
    for r in results:
        if r.error:
            log.error("%s / %s: error: %s", r.feature, r.scenario, r.error)
            code = EXIT_ERROR
        else:
            log.info("%s / %s: %s model after %d steps -> %s", r.feature, r.scenario, r.algorithm, r.env_steps, r.model_path)
    return code


def _cmd_test(args: argparse.Namespace) -> int:
    report = harness.test_mode(
        args.file,
        args.models,
        episodes=args.episodes,
        scenario=args.scenario,
        seed=args.seed,
        force=args.force,
        config_path=args.config,
        jobs=args.jobs,
    )
    for r in report.results:
        rate = "n/a" if r.success_rate is None else f"{r.success_rate:.2f}"
        line = f"{r.verdict.upper():5} {r.feature} / {r.scenario} (success {rate}, threshold {r.threshold})"
        if r.reason:
            line += f": {r.reason}"
        print(line, file=sys.stderr)
    totals = report.totals
    print(
        f"{totals['tests']} scenarios: {totals['passed']} passed, {totals['failures']} failed, {totals['errors']} errors",
        file=sys.stderr,
    )
    if args.report_xml:
        atomic_write(args.report_xml, to_junit_xml(report).encode("utf-8"))
    if args.report_json:
        atomic_write(args.report_json, to_json(report).encode("utf-8"))
    return report.exit_code


def _cmd_oracle(args: argparse.Namespace) -> int:
    code = EXIT_OK
    for r in harness.oracle_mode(args.file, args.scenario, max_ticks=args.max_ticks, config_path=args.config):
        if r.witness is None:
            print(f"{r.scenario}: no solution within budget ({r.max_ticks} ticks, {r.target_pipes} pipes)")
            code = EXIT_FAIL
        else:
            print(f"{r.scenario}: solvable, witness length {len(r.witness)} ticks")
    return code


def _cmd_serve(args: argparse.Namespace) -> int:
    entry = get_env(args.env)
    with EnvServer(entry.factory, args.host, args.port) as server:
        host, port = server.address
        log.info("serving %s on %s:%d (Ctrl-C to stop)", args.env, host, port)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            log.info("shutting down")
    return EXIT_OK


_COMMANDS = {
    "parse": _cmd_parse,
    "lint": _cmd_lint,
    "train": _cmd_train,
    "test": _cmd_test,
    "oracle": _cmd_oracle,
    "serve-env": _cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="bdg: %(message)s", stream=sys.stderr, force=True)
    try:
        return _COMMANDS[args.command](args)
    except harness.DiagnosticsError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_ERROR
    except (BdgError, OSError) as exc:
        print(f"bdg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
