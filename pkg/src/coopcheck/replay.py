"""Deterministic replay of a schedule, trace emission and an interactive stepper."""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from typing import TextIO

from .explorer import classify
from .liveness import BuchiAutomaton
from .model import Report, Stats, Step, Verdict, VerdictKind, render_path
from .runtime import ActionKind, ProgramSpec, StepOutcome, World, init_world


class ReplayDivergence(Exception):
    """Step ``index`` (1-based) of the path cannot be executed."""

    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"replay diverged at step {index}: {reason}")


@dataclass
class TraceRecord:
    index: int
    tid: int
    choice: int | None
    action: str
    site: str
    store_delta: list[tuple[str, int, int]]
    outcome: str
    message: str | None = None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "tid": self.tid,
            "choice": self.choice,
            "action": self.action,
            "site": self.site,
            "store_delta": [{"ref": r, "old": o, "new": n} for r, o, n in self.store_delta],
            "outcome": self.outcome,
            "message": self.message,
        }

    def render(self) -> str:
        who = f"t{self.tid}" if self.choice is None else f"t{self.tid}:{self.choice}"
        line = f"#{self.index} {who} {self.action}@{self.site} -> {self.outcome}"
        if self.message:
            line += f" ({self.message})"
        for ref, old, new in self.store_delta:
            line += f" {ref}:{old}->{new}"
        return line


def emit_trace(records: list[TraceRecord], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps([r.to_json() for r in records], indent=2) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown trace format {fmt!r}")
    return "".join(r.render() + "\n" for r in records)


def _snapshot(world: World) -> tuple[list[int], list[int]]:
    return list(world.cells), list(world.arena)


def _delta(world: World, before) -> list[tuple[str, int, int]]:
    cells, arena = before
    out = []
    for i, (old, new) in enumerate(zip(cells, world.cells)):
        if old != new:
            out.append((world.cell_names[i], old, new))
    name = world.arena_obj.name if world.arena_obj else "arena"
    for i, (old, new) in enumerate(zip(arena, world.arena)):
        if old != new:
            out.append((f"{name}[{i}]", old, new))
    return out


class Session:
    """A world driven step by step along a fixed path."""

    def __init__(self, program: ProgramSpec, path, auto_yield: bool = False):
        self.program = program
        self.path = tuple(path)
        self.world = init_world(program, auto_yield)
        self.records: list[TraceRecord] = []
        self.last: StepOutcome | None = self.world.init_outcome
        self.pos = 0

    @property
    def done(self) -> bool:
        return self.pos >= len(self.path)

    def check_step(self, k: int, step: Step) -> None:
        w = self.world
        if w.dead:
            raise ReplayDivergence(k, "the program already failed")
        if not 1 <= step.tid <= len(w.threads):
            raise ReplayDivergence(k, f"no thread {step.tid}")
        rec = w.threads[step.tid - 1]
        if rec.terminated:
            raise ReplayDivergence(k, f"thread {step.tid} has terminated")
        if not w.is_enabled(rec):
            raise ReplayDivergence(k, f"thread {step.tid} is blocked on {w.describe(rec.pending)}")
        if rec.pending.kind is ActionKind.CHOOSE:
            n = rec.pending.operands[0]
            if step.choice is None or not 0 <= step.choice < n:
                raise ReplayDivergence(k, f"thread {step.tid} needs a choice in [0, {n})")
        elif step.choice is not None:
            raise ReplayDivergence(k, f"thread {step.tid} is not at a choose")

    def step(self) -> TraceRecord:
        k = self.pos + 1
        step = self.path[self.pos]
        self.check_step(k, step)
        w = self.world
        rec = w.threads[step.tid - 1]
        action = w.describe(rec.pending)
        site = rec.pending.site
        before = _snapshot(w)
        out = w.execute_step(step.tid, step.choice)
        tr = TraceRecord(k, step.tid, step.choice, action, site, _delta(w, before), out.kind.value, out.message)
        self.records.append(tr)
        self.last = out
        self.pos += 1
        return tr

    def run(self) -> None:
        while not self.done:
            self.step()

    def verdict(self) -> Verdict:
        v = classify(self.world, self.last)
        return v if v is not None else Verdict(VerdictKind.NO_VIOLATION)

    def close(self) -> None:
        self.world.close()


def replay(program: ProgramSpec, path, auto_yield: bool = False):
    """Execute exactly ``path`` from a fresh world; return ``(Report, records)``."""
    s = Session(program, path, auto_yield)
    try:
        s.run()
        verdict = s.verdict()
        stats = Stats(0, 1 + len(s.records), len(s.records), False)
        rpath = tuple(path) if verdict.kind.is_violation else ()
        return Report(program.name, verdict, rpath, stats), s.records
    finally:
        s.close()


def _states_after(a: BuchiAutomaton, start: set[str], valuation) -> set[str]:
    out = set()
    for q in start:
        out.update(a.successors(q, valuation))
    return out


def replay_lasso(program: ProgramSpec, automaton: BuchiAutomaton, prefix, cycle, auto_yield: bool = False):
    """Replay ``prefix`` then one iteration of ``cycle`` and check the product revisit.

    Reports a liveness violation iff the world after the cycle equals the
    world after the prefix and some automaton state reachable after the
    prefix can run the cycle back to itself through an accepting state.
    """
    prefix, cycle = tuple(prefix), tuple(cycle)
    s = Session(program, prefix + cycle, auto_yield)
    try:
        automaton.check_symbols(s.world.symbols)
        order = {q: i for i, q in enumerate(automaton.states)}
        states = set(automaton.successors(automaton.initial, s.world.valuation()))
        vals = []
        for _ in prefix:
            s.step()
            states = _states_after(automaton, states, s.world.valuation())
        fp_loop = s.world.fingerprint()
        for _ in cycle:
            s.step()
            vals.append(s.world.valuation())
        stats = Stats(0, 1 + len(s.records), len(s.records), False)
        if s.last is not None and s.last.failed:
            v = s.verdict()
            return Report(program.name, v, prefix + cycle, stats), s.records
        if s.world.fingerprint() == fp_loop:
            # accepting states first, then declaration order
            for q in sorted(states, key=lambda q: (q not in automaton.accepting, order[q])):
                if _cycle_returns(automaton, q, vals):
                    from .model import Lasso

                    lasso = Lasso(prefix, cycle)
                    msg = f"accepting cycle through automaton state {q} ({len(cycle)} step cycle)"
                    v = Verdict(VerdictKind.LIVENESS_VIOLATION, msg, lasso)
                    return Report(program.name, v, prefix + cycle, stats), s.records
        return Report(program.name, Verdict(VerdictKind.NO_VIOLATION), (), stats), s.records
    finally:
        s.close()


def _cycle_returns(a: BuchiAutomaton, q: str, vals) -> bool:
    frontier = {(q, q in a.accepting)}
    for val in vals:
        frontier = {(q2, acc or q2 in a.accepting) for q1, acc in frontier for q2 in a.successors(q1, val)}
    return (q, True) in frontier


# -- interactive stepper -----------------------------------------------------

HELP = """commands:
  step               execute the next scheduled step
  continue           run to the end of the path
  print <name>       cell, arena slot (arena[3] or 3), mutex/semaphore, or thread (t2)
  where              status of every thread
  quit               leave the session
"""


@dataclass
class Stepper:
    """Line-oriented replay session; feed it commands with :meth:`handle`."""

    program: ProgramSpec
    path: tuple[Step, ...]
    out: TextIO
    session: Session = field(init=False)
    finished: bool = field(default=False, init=False)

    def __post_init__(self):
        self.session = Session(self.program, self.path)
        self.out.write(f"replaying {self.program.name} along {render_path(self.path) or '<empty>'}\n")

    def handle(self, line: str) -> bool:
        """Run one command; returns False once the session should end."""
        try:
            parts = shlex.split(line)
        except ValueError as e:
            self.out.write(f"error: {e}\n")
            return True
        if not parts:
            return True
        cmd, args = parts[0], parts[1:]
        s = self.session
        if cmd in ("step", "s"):
            if s.done:
                self.out.write("end of path\n")
            else:
                self.out.write(s.step().render() + "\n")
                if s.done:
                    self._announce()
        elif cmd in ("continue", "c"):
            while not s.done:
                self.out.write(s.step().render() + "\n")
            self._announce()
        elif cmd in ("print", "p"):
            self.out.write(self._print(" ".join(args)) + "\n")
        elif cmd in ("where", "w"):
            self.out.write(self._where())
        elif cmd in ("quit", "q", "exit"):
            return False
        elif cmd == "help":
            self.out.write(HELP)
        else:
            self.out.write(f"unknown command {cmd!r}; try help\n")
        return True

    def _announce(self) -> None:
        if not self.finished:
            self.finished = True
            v = self.session.verdict()
            msg = f": {v.message}" if v.message else ""
            self.out.write(f"VERDICT: {v.kind.value}{msg}\n")

    def _print(self, what: str) -> str:
        w = self.session.world
        if not what:
            return "usage: print <name>"
        if what in w.cell_index:
            return f"{what} = {w.cells[w.cell_index[what]]}"
        for obj in w.sync:
            if obj.name == what:
                if obj.kind.value == "Mutex":
                    return f"{what}: owner = {obj.owner if obj.owner is not None else 'none'}"
                return f"{what}: count = {obj.count}"
        idx_text = what
        arena_name = w.arena_obj.name if w.arena_obj else "arena"
        for prefix in (f"{arena_name}[", "arena["):
            if what.startswith(prefix) and what.endswith("]"):
                idx_text = what[len(prefix):-1]
        if idx_text.lstrip("-").isdigit():
            i = int(idx_text)
            if 0 <= i < len(w.arena):
                return f"{arena_name}[{i}] = {w.arena[i]}"
            return f"arena index {i} out of range"
        tid_text = what[1:] if what.startswith("t") else what
        if what.startswith(("t", "thread")):
            tid_text = what.removeprefix("thread").removeprefix("t").strip()
            if tid_text.isdigit() and 1 <= int(tid_text) <= len(w.threads):
                return self._thread_line(w.threads[int(tid_text) - 1])
        return f"no cell, slot, sync object or thread named {what!r}"

    def _thread_line(self, rec) -> str:
        w = self.session.world
        if rec.terminated:
            return f"thread {rec.tid}: terminated"
        state = "enabled" if w.is_enabled(rec) else "blocked"
        site = rec.pending.site if rec.pending else "-"
        return f"thread {rec.tid}: {state} at {w.describe(rec.pending)}@{site}"

    def _where(self) -> str:
        s = self.session
        head = f"step {s.pos}/{len(s.path)}\n"
        return head + "".join(self._thread_line(r) + "\n" for r in s.world.threads)

    def run(self, inp: TextIO, prompt: bool = False) -> Verdict:
        while True:
            if prompt:
                self.out.write("(replay) ")
                self.out.flush()
            line = inp.readline()
            if not line:
                break
            try:
                if not self.handle(line):
                    break
            except ReplayDivergence as e:
                self.out.write(f"error: {e}\n")
                break
        return self.session.verdict()

    def close(self) -> None:
        self.session.close()
