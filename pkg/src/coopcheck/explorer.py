"""Depth-bounded exhaustive DFS over the schedule tree.

Backtracking is stateless: to revisit a node the world is rebuilt from
scratch and the node's path is re-executed. This is correct because the
runtime is deterministic for a fixed step sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Report, Stats, Step, Verdict, VerdictKind
from .runtime import ActionKind, OutcomeKind, ProgramSpec, StepOutcome, World, init_world


@dataclass(frozen=True)
class ExploreConfig:
    max_depth: int = 1000
    dedup: bool = False
    stop_at_first: bool = True
    auto_yield: bool = False

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


def children(world: World) -> list[Step]:
    """Successor steps in canonical order: ascending tid, then ascending choice."""
    out = []
    for tid, n in world.enabled_steps():
        if world.threads[tid - 1].pending.kind is ActionKind.CHOOSE:
            out.extend(Step(tid, c) for c in range(n))
        else:
            out.append(Step(tid))
    return out


def failure_verdict(outcome: StepOutcome) -> Verdict:
    kind = (
        VerdictKind.ASSERT_FAILURE
        if outcome.kind is OutcomeKind.ASSERT_FAILED
        else VerdictKind.RUNTIME_FAULT
    )
    trail = " <- ".join(reversed(outcome.trail))
    msg = f"thread {outcome.tid}: {outcome.message}"
    if trail:
        msg += f" [at {trail}]"
    return Verdict(kind, msg)


def deadlock_verdict(world: World) -> Verdict:
    parts = [
        f"{r.tid} on {world.describe(r.pending)}" for r in world.threads if not r.terminated
    ]
    return Verdict(VerdictKind.DEADLOCK, "all live threads blocked: " + ", ".join(parts))


def classify(world: World, outcome: StepOutcome | None) -> Verdict | None:
    """Violation manifested at a freshly reached state, if any."""
    if outcome is not None and outcome.kind.is_failure:
        return failure_verdict(outcome)
    if not world.dead and world.live_threads() and not world.enabled_steps():
        return deadlock_verdict(world)
    return None


class Replayer:
    """Keeps one live world and moves it to requested paths by reset + replay."""

    def __init__(self, program: ProgramSpec, auto_yield: bool, stats: Stats):
        self.program = program
        self.auto_yield = auto_yield
        self.stats = stats
        self.world = init_world(program, auto_yield)
        self.at: tuple[Step, ...] | None = ()
        stats.states_visited += 1

    def goto(self, path) -> World:
        if self.at is not None and tuple(path) == self.at:
            return self.world
        self.world.close()
        self.world = init_world(self.program, self.auto_yield)
        for s in path:
            self.world.execute_step(s.tid, s.choice)
            self.stats.transitions_executed += 1
            self.stats.states_visited += 1
        self.at = tuple(path)
        return self.world

    def step(self, step: Step) -> StepOutcome:
        out = self.world.execute_step(step.tid, step.choice)
        self.stats.transitions_executed += 1
        self.stats.states_visited += 1
        if self.at is not None:
            self.at = self.at + (step,)
        return out

    def invalidate(self) -> None:
        self.at = None

    def close(self) -> None:
        self.world.close()


def explore(program: ProgramSpec, cfg: ExploreConfig = ExploreConfig()) -> Report:
    """Search every schedule of length <= cfg.max_depth for a violation."""
    stats = Stats()
    rp = Replayer(program, cfg.auto_yield, stats)
    found: list[tuple[Verdict, tuple[Step, ...]]] = []
    seen: dict[int, int] = {}

    def evaluate(path, outcome) -> list[Step] | None:
        """Return the children to expand at this node, or None to backtrack."""
        world = rp.world
        verdict = classify(world, outcome)
        if verdict is not None:
            found.append((verdict, tuple(path)))
            return None
        if world.dead or not world.live_threads():
            return None
        depth = len(path)
        if depth >= cfg.max_depth:
            stats.max_depth_hit = True
            return None
        if cfg.dedup:
            fp = world.fingerprint()
            prev = seen.get(fp)
            if prev is not None and prev <= depth:
                return None
            seen[fp] = depth
        stats.states_expanded += 1
        return children(world)

    try:
        path: list[Step] = []
        root = evaluate(path, rp.world.init_outcome)
        stack = [] if root is None else [[root, 0]]
        while stack and not (found and cfg.stop_at_first):
            frame = stack[-1]
            kids, i = frame
            if i == len(kids):
                stack.pop()
                if path:
                    path.pop()
                rp.invalidate()
                continue
            frame[1] = i + 1
            rp.goto(path)
            outcome = rp.step(kids[i])
            path.append(kids[i])
            nxt = evaluate(path, outcome)
            if nxt is None:
                path.pop()
                rp.invalidate()
            else:
                stack.append([nxt, 0])
    finally:
        rp.close()

    if not found:
        return Report(program.name, Verdict(VerdictKind.NO_VIOLATION), (), stats)
    verdict, vpath = found[0]
    return Report(program.name, verdict, vpath, stats, others=found[1:])


def violates(program: ProgramSpec, cfg: ExploreConfig, depth: int) -> bool:
    cfg = ExploreConfig(depth, cfg.dedup, True, cfg.auto_yield)
    return explore(program, cfg).kind.is_violation


def min_depth_search(program: ProgramSpec, cfg: ExploreConfig = ExploreConfig(), hi: int = 1000):
    """Smallest max_depth in [1, hi] at which explore reports a violation, else None.

    Binary search; valid because finding a violation is monotone in the bound.
    """
    if hi < 1:
        raise ValueError("hi must be >= 1")
    if not violates(program, cfg, hi):
        return None
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if violates(program, cfg, mid):
            hi = mid
        else:
            lo = mid + 1
    return lo
