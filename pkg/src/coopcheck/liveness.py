"""Liveness checking with Büchi automata over program-registered symbols.

The automaton describes the *negation* of the wanted property. The search
runs over the product of the schedule graph and the automaton and looks for
a reachable accepting product node that lies on a cycle (nested DFS: an
outer search, and from every accepting node in post-order an inner search
for a path back to it). Product nodes are identified by
``(world fingerprint, automaton state)``, so liveness mode always works with
fingerprint deduplication.

The automaton reads the valuation of the world *reached* by each transition;
the initial world's valuation drives its first move. Executions that end
(all threads terminated, deadlock, or a failure) are finite and never form a
counterexample here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .explorer import ExploreConfig, Replayer, children
from .model import Lasso, Report, Stats, Step, Verdict, VerdictKind
from .runtime import ProgramSpec


class LivenessSetupError(ValueError):
    """Automaton and program do not fit together (e.g. unregistered symbol)."""


class AutomatonSyntaxError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# -- guards ------------------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    """Boolean formula over symbol names.

    ``op`` is one of ``const``, ``sym``, ``not``, ``and``, ``or``.
    """

    op: str
    args: tuple = ()

    def eval(self, valuation: dict[str, bool]) -> bool:
        op = self.op
        if op == "const":
            return self.args[0]
        if op == "sym":
            return valuation[self.args[0]]
        if op == "not":
            return not self.args[0].eval(valuation)
        if op == "and":
            return self.args[0].eval(valuation) and self.args[1].eval(valuation)
        return self.args[0].eval(valuation) or self.args[1].eval(valuation)

    def symbols(self) -> set[str]:
        if self.op == "sym":
            return {self.args[0]}
        if self.op == "const":
            return set()
        return set().union(*(a.symbols() for a in self.args))

    def render(self) -> str:
        op = self.op
        if op == "const":
            return "true" if self.args[0] else "false"
        if op == "sym":
            return self.args[0]
        if op == "not":
            inner = self.args[0]
            s = inner.render()
            return "!" + (s if inner.op in ("const", "sym", "not") else f"({s})")
        sep = " & " if op == "and" else " | "
        return "(" + sep.join(a.render() for a in self.args) + ")"

    def __str__(self) -> str:
        s = self.render()
        if self.op in ("and", "or"):
            s = s[1:-1]
        return s


TRUE = Guard("const", (True,))
FALSE = Guard("const", (False,))


def sym(name: str) -> Guard:
    return Guard("sym", (name,))


def g_not(a: Guard) -> Guard:
    return Guard("not", (a,))


def g_and(a: Guard, b: Guard) -> Guard:
    return Guard("and", (a, b))


def g_or(a: Guard, b: Guard) -> Guard:
    return Guard("or", (a, b))


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_.]*)|(&&|\|\||[&|!()∧∨¬]))")


def parse_guard(text: str, line: int = 1) -> Guard:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise AutomatonSyntaxError(line, f"unexpected character {text[pos:].strip()[:1]!r} in guard")
        tok = m.group(1) or {"&&": "&", "||": "|", "∧": "&", "∨": "|", "¬": "!"}.get(m.group(2), m.group(2))
        tokens.append(tok)
        pos = m.end()
    if not tokens:
        raise AutomatonSyntaxError(line, "empty guard")
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else None

    def take(expected=None):
        nonlocal i
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise AutomatonSyntaxError(line, f"expected {expected or 'operand'} in guard")
        i += 1
        return tok

    def disj():
        g = conj()
        while peek() == "|":
            take("|")
            g = g_or(g, conj())
        return g

    def conj():
        g = unary()
        while peek() == "&":
            take("&")
            g = g_and(g, unary())
        return g

    def unary():
        if peek() == "!":
            take("!")
            return g_not(unary())
        tok = take()
        if tok == "(":
            g = disj()
            if peek() != ")":
                raise AutomatonSyntaxError(line, "unbalanced parentheses in guard")
            take(")")
            return g
        if tok in ("&", "|", ")"):
            raise AutomatonSyntaxError(line, f"unexpected {tok!r} in guard")
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        return sym(tok)

    g = disj()
    if i != len(tokens):
        tok = tokens[i]
        msg = "unbalanced parentheses in guard" if tok == ")" else f"trailing {tok!r} in guard"
        raise AutomatonSyntaxError(line, msg)
    return g


# -- automata ----------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    guard: Guard


@dataclass
class BuchiAutomaton:
    states: list[str]
    initial: str
    accepting: frozenset[str]
    edges: list[Edge] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.states)) != len(self.states):
            raise ValueError("duplicate automaton state")
        if self.initial not in self.states:
            raise ValueError(f"initial state {self.initial!r} not declared")
        if not self.accepting:
            raise ValueError("automaton needs at least one accepting state")
        for s in self.accepting:
            if s not in self.states:
                raise ValueError(f"accepting state {s!r} not declared")
        for e in self.edges:
            if e.src not in self.states or e.dst not in self.states:
                raise ValueError(f"edge {e.src} -> {e.dst} names an undeclared state")

    def symbols(self) -> set[str]:
        return set().union(*(e.guard.symbols() for e in self.edges)) if self.edges else set()

    def successors(self, state: str, valuation: dict[str, bool]) -> list[str]:
        out = []
        for e in self.edges:
            if e.src == state and e.dst not in out and e.guard.eval(valuation):
                out.append(e.dst)
        return out

    def check_symbols(self, registered) -> None:
        missing = sorted(self.symbols() - set(registered))
        if missing:
            raise LivenessSetupError(f"automaton uses unregistered symbol(s): {', '.join(missing)}")


def build_response_negation(p: str, q: str) -> BuchiAutomaton:
    """Automaton for the runs violating G(p -> F q), i.e. F(p & G !q)."""
    return BuchiAutomaton(
        states=["q0", "q1"],
        initial="q0",
        accepting=frozenset({"q1"}),
        edges=[
            Edge("q0", "q0", TRUE),
            Edge("q0", "q1", g_and(sym(p), g_not(sym(q)))),
            Edge("q1", "q1", g_not(sym(q))),
        ],
    )


def render_automaton(a: BuchiAutomaton) -> str:
    lines = []
    for s in a.states:
        flags = (" initial" if s == a.initial else "") + (" accepting" if s in a.accepting else "")
        lines.append(f"state {s}{flags}")
    for e in a.edges:
        lines.append(f"edge {e.src} {e.dst} {e.guard}")
    return "\n".join(lines) + "\n"


def parse_automaton(text: str) -> BuchiAutomaton:
    """Parse ``state <name> [initial] [accepting]`` and ``edge <from> <to> <guard>`` lines."""
    states: list[str] = []
    initial = None
    accepting = set()
    edges = []
    edge_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "state":
            if len(parts) < 2:
                raise AutomatonSyntaxError(lineno, "state needs a name")
            name = parts[1]
            if name in states:
                raise AutomatonSyntaxError(lineno, f"duplicate state {name!r}")
            states.append(name)
            for flag in parts[2:]:
                if flag == "initial":
                    if initial is not None:
                        raise AutomatonSyntaxError(lineno, "second initial state")
                    initial = name
                elif flag == "accepting":
                    accepting.add(name)
                else:
                    raise AutomatonSyntaxError(lineno, f"unknown state flag {flag!r}")
        elif parts[0] == "edge":
            bits = line.split(None, 3)
            if len(bits) < 4:
                raise AutomatonSyntaxError(lineno, "edge needs <from> <to> <guard>")
            _, src, dst, guard_text = bits
            edges.append(Edge(src, dst, parse_guard(guard_text, lineno)))
            edge_lines.append(lineno)
        else:
            raise AutomatonSyntaxError(lineno, f"unknown directive {parts[0]!r}")
    last = len(text.splitlines()) or 1
    if not states:
        raise AutomatonSyntaxError(last, "no states declared")
    for e, ln in zip(edges, edge_lines):
        for s in (e.src, e.dst):
            if s not in states:
                raise AutomatonSyntaxError(ln, f"unknown state {s!r}")
    if initial is None:
        raise AutomatonSyntaxError(last, "no initial state")
    if not accepting:
        raise AutomatonSyntaxError(last, "no accepting state")
    return BuchiAutomaton(states, initial, frozenset(accepting), edges)


def parse_property(spec: str, read_file=None) -> BuchiAutomaton:
    """``response:<p>,<q>`` or ``file:<path>``."""
    kind, sep, rest = spec.partition(":")
    if kind == "response" and sep:
        names = [s.strip() for s in rest.split(",")]
        if len(names) != 2 or not all(names):
            raise ValueError("response property needs two symbols: response:<p>,<q>")
        return build_response_negation(*names)
    if kind == "file" and sep and rest:
        if read_file is None:
            with open(rest, encoding="utf-8") as fh:
                return parse_automaton(fh.read())
        return parse_automaton(read_file(rest))
    raise ValueError(f"unknown liveness property {spec!r}; use response:<p>,<q> or file:<path>")


# -- product search ----------------------------------------------------------


@dataclass
class _Frame:
    path: tuple[Step, ...]
    qs: tuple[str, ...]  # automaton state at the root, then after each step
    key: tuple[int, str]
    steps: list[Step]
    si: int = 0
    succ: list[str] = field(default_factory=list)
    qi: int = 0
    child_fp: int = 0


class _ProductSearch:
    def __init__(self, program: ProgramSpec, automaton: BuchiAutomaton, cfg: ExploreConfig):
        self.program = program
        self.a = automaton
        self.cfg = cfg
        self.stats = Stats()
        self.rp = Replayer(program, cfg.auto_yield, self.stats)
        automaton.check_symbols(self.rp.world.symbols)

    def _steps_at(self, depth: int) -> list[Step]:
        world = self.rp.world
        if world.dead:
            return []
        if depth >= self.cfg.max_depth:
            self.stats.max_depth_hit = True
            return []
        self.stats.states_expanded += 1
        return children(world)

    def _advance(self, f: _Frame) -> bool:
        """Execute the frame's next step; False when steps are exhausted."""
        if f.si >= len(f.steps):
            return False
        step = f.steps[f.si]
        f.si += 1
        self.rp.goto(f.path)
        out = self.rp.step(step)
        f.qi = 0
        if out.failed:
            f.succ = []
        else:
            world = self.rp.world
            f.child_fp = world.fingerprint()
            f.succ = self.a.successors(f.qs[-1], world.valuation())
        return True

    def run(self) -> Report:
        rp = self.rp
        try:
            w0 = rp.world
            if w0.dead:
                return self._report(None)
            fp0 = w0.fingerprint()
            val0 = w0.valuation()
            seen: dict[tuple[int, str], int] = {}
            for q in self.a.successors(self.a.initial, val0):
                key = (fp0, q)
                if key in seen:
                    continue
                seen[key] = 0
                rp.goto(())
                stack = [_Frame((), (q,), key, self._steps_at(0))]
                lasso = self._outer(stack, seen)
                if lasso is not None:
                    return self._report(lasso)
            return self._report(None)
        finally:
            rp.close()

    def _outer(self, stack: list[_Frame], seen) -> Lasso | None:
        rp = self.rp
        while stack:
            f = stack[-1]
            if f.qi < len(f.succ):
                q2 = f.succ[f.qi]
                f.qi += 1
                path2 = f.path + (f.steps[f.si - 1],)
                key2 = (f.child_fp, q2)
                d = len(path2)
                prev = seen.get(key2)
                if prev is not None and prev <= d:
                    continue
                seen[key2] = d
                rp.goto(path2)
                stack.append(_Frame(path2, f.qs + (q2,), key2, self._steps_at(d)))
                continue
            if self._advance(f):
                continue
            stack.pop()
            if f.qs[-1] in self.a.accepting:
                lasso = self._inner(f)
                if lasso is not None:
                    return lasso
        return None

    def _inner(self, seed: _Frame) -> Lasso | None:
        """Search for a path from the seed back to itself."""
        rp = self.rp
        seen: dict[tuple[int, str], int] = {}
        base = len(seed.path)
        rp.goto(seed.path)
        stack = [_Frame(seed.path, seed.qs, seed.key, self._steps_at(0))]
        while stack:
            f = stack[-1]
            if f.qi < len(f.succ):
                q2 = f.succ[f.qi]
                f.qi += 1
                path2 = f.path + (f.steps[f.si - 1],)
                key2 = (f.child_fp, q2)
                qs2 = f.qs + (q2,)
                if key2 == seed.key:
                    return Lasso(
                        prefix=seed.path,
                        cycle=path2[base:],
                        prefix_states=seed.qs,
                        cycle_states=qs2[len(seed.qs):],
                    )
                d = len(path2) - base
                prev = seen.get(key2)
                if prev is not None and prev <= d:
                    continue
                seen[key2] = d
                rp.goto(path2)
                stack.append(_Frame(path2, qs2, key2, self._steps_at(d)))
                continue
            if not self._advance(f):
                stack.pop()
        return None

    def _report(self, lasso: Lasso | None) -> Report:
        name = self.program.name
        if lasso is None:
            return Report(name, Verdict(VerdictKind.NO_VIOLATION), (), self.stats)
        msg = (
            f"accepting cycle through automaton state {lasso.prefix_states[-1]} "
            f"({len(lasso.cycle)} step cycle)"
        )
        verdict = Verdict(VerdictKind.LIVENESS_VIOLATION, msg, lasso)
        return Report(name, verdict, lasso.prefix + lasso.cycle, self.stats)


def liveness_explore(
    program: ProgramSpec, automaton: BuchiAutomaton, cfg: ExploreConfig = ExploreConfig()
) -> Report:
    """Search for an infinite schedule accepted by ``automaton`` (a lasso)."""
    return _ProductSearch(program, automaton, cfg).run()


def eval_guard(guard: Guard, world) -> bool:
    return guard.eval(world.valuation())
