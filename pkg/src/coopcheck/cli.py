"""Command-line driver."""

from __future__ import annotations

import argparse
import json
import sys

from . import corpus
from .explorer import ExploreConfig, explore, min_depth_search
from .liveness import AutomatonSyntaxError, LivenessSetupError, liveness_explore, parse_property
from .model import PathParseError, Report, parse_path, render_path
from .replay import ReplayDivergence, Stepper, emit_trace, replay, replay_lasso
from .runtime import SetupError

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def render_text(report: Report) -> str:
    v = report.verdict
    lines = [f"PROGRAM: {report.program}", f"VERDICT: {v.kind.value}"]
    if v.message:
        lines.append(f"MESSAGE: {v.message}")
    lines.append(f"PATH: {render_path(report.path)}")
    if v.lasso is not None:
        lines.append(f"LASSO_PREFIX: {render_path(v.lasso.prefix)}")
        lines.append(f"LASSO_CYCLE: {render_path(v.lasso.cycle)}")
    st = report.stats
    lines += [
        f"STATES_EXPANDED: {st.states_expanded}",
        f"STATES_VISITED: {st.states_visited}",
        f"TRANSITIONS: {st.transitions_executed}",
        f"MAX_DEPTH_HIT: {'true' if st.max_depth_hit else 'false'}",
    ]
    if report.min_depth is not None:
        lines.append(f"MIN_DEPTH: {report.min_depth}")
    return "\n".join(lines) + "\n"


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2) + "\n"
    return render_text(report)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coopcheck", description="Explicit-state model checker for cooperative threaded programs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, depth=True):
        sp.add_argument("program", help="corpus program name (see `coopcheck list`)")
        if depth:
            sp.add_argument("--max-depth", type=int, default=1000, metavar="N")
            sp.add_argument("--dedup", action="store_true", help="prune states already seen at no greater depth")
        sp.add_argument("--auto-yield", action="store_true", help="make every shared read/write a scheduling point")
        sp.add_argument("--format", choices=("text", "json"), default="text")

    c = sub.add_parser("check", help="explore all schedules up to a depth bound")
    common(c)
    c.add_argument("--liveness", metavar="PROP", help="response:<p>,<q> or file:<automaton file>")

    r = sub.add_parser("replay", help="execute one schedule deterministically")
    common(r, depth=False)
    r.add_argument("--path", required=True, help='schedule such as "1;2;1:0"')
    r.add_argument("--cycle", help="cycle of a lasso; --path is then its prefix (requires --liveness)")
    r.add_argument("--liveness", metavar="PROP", help="property used to validate a lasso")
    r.add_argument("--interactive", action="store_true", help="step through the schedule from stdin")
    r.add_argument("--trace", action="store_true", help="print the per-step trace before the report")

    m = sub.add_parser("min-depth", help="binary-search the smallest depth exposing a violation")
    common(m)
    m.add_argument("--hi", type=int, default=1000, metavar="N")
    m.add_argument("--liveness", help=argparse.SUPPRESS)

    sub.add_parser("list", help="list corpus programs")
    return p


def _program(name: str):
    try:
        return corpus.get_program(name)
    except KeyError:
        raise UsageError(f"unknown program {name!r}; available: {', '.join(sorted(corpus.PROGRAMS))}") from None


def _path(text: str):
    try:
        return parse_path(text)
    except PathParseError as e:
        raise UsageError(f"bad path: {e}") from None


def _automaton(spec: str):
    try:
        return parse_property(spec)
    except (AutomatonSyntaxError, ValueError, OSError) as e:
        raise UsageError(f"bad liveness property: {e}") from None


def _cfg(args) -> ExploreConfig:
    if args.max_depth < 1:
        raise UsageError("--max-depth must be >= 1")
    return ExploreConfig(max_depth=args.max_depth, dedup=args.dedup, auto_yield=args.auto_yield)


def _run(args, out, inp) -> int:
    if args.command == "list":
        for name in sorted(corpus.PROGRAMS):
            desc = corpus.PROGRAMS[name].description
            out.write(f"{name}\t{desc}\n" if desc else f"{name}\n")
        return EXIT_OK

    program = _program(args.program)
    if args.command == "check":
        cfg = _cfg(args)
        if args.liveness:
            report = liveness_explore(program, _automaton(args.liveness), cfg)
        else:
            report = explore(program, cfg)
    elif args.command == "min-depth":
        if args.liveness:
            raise UsageError("min-depth searches safety violations only; --liveness is not accepted")
        if args.hi < 1:
            raise UsageError("--hi must be >= 1")
        cfg = _cfg(args)
        found = min_depth_search(program, cfg, args.hi)
        depth = found if found is not None else args.hi
        report = explore(program, ExploreConfig(depth, cfg.dedup, True, cfg.auto_yield))
        report.min_depth = found
        if found is None:
            out.write(render(report, args.format))
            if args.format == "text":
                out.write("MIN_DEPTH: none\n")
            return EXIT_OK
    else:
        path = _path(args.path)
        if args.cycle is not None or args.liveness:
            if args.cycle is None or not args.liveness:
                raise UsageError("lasso replay needs both --cycle and --liveness")
            if args.interactive:
                raise UsageError("--interactive cannot be combined with --cycle")
            cycle = _path(args.cycle)
            if not cycle:
                raise UsageError("--cycle must be non-empty")
            report, records = replay_lasso(program, _automaton(args.liveness), path, cycle, args.auto_yield)
        elif args.interactive:
            st = Stepper(program, path, out)
            try:
                verdict = st.run(inp, prompt=inp.isatty())
            finally:
                st.close()
            return EXIT_VIOLATION if verdict.kind.is_violation else EXIT_OK
        else:
            report, records = replay(program, path, args.auto_yield)
        if args.trace:
            out.write(emit_trace(records, args.format))
    out.write(render(report, args.format))
    return EXIT_VIOLATION if report.kind.is_violation else EXIT_OK


def main(argv=None, out=None, err=None, inp=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    inp = inp or sys.stdin
    try:
        args = build_parser().parse_args(argv)
        return _run(args, out, inp)
    except UsageError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    except (ReplayDivergence, SetupError, LivenessSetupError) as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except Exception as e:  # noqa: BLE001
        err.write(f"internal error: {type(e).__name__}: {e}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())


def main_entry() -> None:
    sys.exit(main())
