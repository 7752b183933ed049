"""Shared vocabulary: steps, paths, verdicts, statistics, reports, fingerprints."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Any

# tid 0 belongs to the controller and is never scheduled.
CONTROLLER_TID = 0
MAIN_TID = 1


class PathParseError(ValueError):
    """A path string element could not be parsed."""

    def __init__(self, position: int, element: str, reason: str):
        self.position = position
        self.element = element
        super().__init__(f"bad path element {position} ({element!r}): {reason}")


@dataclass(frozen=True, slots=True)
class Step:
    tid: int
    choice: int | None = None

    def __str__(self) -> str:
        return str(self.tid) if self.choice is None else f"{self.tid}:{self.choice}"


def render_path(steps) -> str:
    return ";".join(str(s) for s in steps)


def parse_path(text: str) -> tuple[Step, ...]:
    text = text.strip()
    if not text:
        return ()
    steps = []
    for pos, raw in enumerate(text.split(";"), start=1):
        elem = raw.strip()
        tid_s, sep, choice_s = elem.partition(":")
        try:
            tid = int(tid_s)
        except ValueError:
            raise PathParseError(pos, elem, "thread id is not an integer") from None
        if tid < 1:
            raise PathParseError(pos, elem, "thread ids start at 1")
        choice = None
        if sep:
            try:
                choice = int(choice_s)
            except ValueError:
                raise PathParseError(pos, elem, "choice is not an integer") from None
            if choice < 0:
                raise PathParseError(pos, elem, "choice must be non-negative")
        steps.append(Step(tid, choice))
    return tuple(steps)


class VerdictKind(enum.Enum):
    NO_VIOLATION = "NO_VIOLATION"
    DEADLOCK = "DEADLOCK"
    ASSERT_FAILURE = "ASSERT_FAILURE"
    RUNTIME_FAULT = "RUNTIME_FAULT"
    LIVENESS_VIOLATION = "LIVENESS_VIOLATION"

    @property
    def is_violation(self) -> bool:
        return self is not VerdictKind.NO_VIOLATION


@dataclass(frozen=True)
class Lasso:
    """Infinite counterexample: run ``prefix`` once, then ``cycle`` forever.

    ``prefix_states``/``cycle_states`` hold the automaton state reached after
    each step; they are needed to re-check nondeterministic automata.
    """

    prefix: tuple[Step, ...]
    cycle: tuple[Step, ...]
    prefix_states: tuple[str, ...] = ()
    cycle_states: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("lasso cycle must be non-empty")


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    message: str | None = None
    lasso: Lasso | None = None

    def __post_init__(self):
        if (self.kind is VerdictKind.LIVENESS_VIOLATION) != (self.lasso is not None):
            raise ValueError("a lasso accompanies exactly the liveness verdicts")


@dataclass
class Stats:
    """Exploration counters.

    ``states_visited`` counts the root once plus one arrival per executed
    transition, replays included, so ``transitions == visited - 1`` for a
    plain search. Re-establishing the root by reset is not an arrival.
    """

    states_expanded: int = 0
    states_visited: int = 0
    transitions_executed: int = 0
    max_depth_hit: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "expanded": self.states_expanded,
            "visited": self.states_visited,
            "transitions": self.transitions_executed,
            "max_depth_hit": self.max_depth_hit,
        }


@dataclass
class Report:
    program: str
    verdict: Verdict
    path: tuple[Step, ...] = ()
    stats: Stats = field(default_factory=Stats)
    min_depth: int | None = None
    # further violations when exploring with stop_at_first=False
    others: list[tuple[Verdict, tuple[Step, ...]]] = field(default_factory=list)

    @property
    def kind(self) -> VerdictKind:
        return self.verdict.kind

    def to_json(self) -> dict[str, Any]:
        lasso = self.verdict.lasso
        out = {
            "program": self.program,
            "verdict": self.verdict.kind.value,
            "message": self.verdict.message,
            "path": render_path(self.path),
            "lasso": None
            if lasso is None
            else {"prefix": render_path(lasso.prefix), "cycle": render_path(lasso.cycle)},
            "stats": self.stats.to_json(),
        }
        if self.min_depth is not None:
            out["min_depth"] = self.min_depth
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Report:
        lasso = None
        if obj.get("lasso"):
            lasso = Lasso(parse_path(obj["lasso"]["prefix"]), parse_path(obj["lasso"]["cycle"]))
        st = obj["stats"]
        return cls(
            program=obj["program"],
            verdict=Verdict(VerdictKind(obj["verdict"]), obj.get("message"), lasso),
            path=parse_path(obj["path"]),
            stats=Stats(st["expanded"], st["visited"], st["transitions"], st["max_depth_hit"]),
            min_depth=obj.get("min_depth"),
        )


def digest(canonical: Any) -> int:
    """64-bit fingerprint of a canonical state tuple (ints, strs, nested tuples)."""
    data = repr(canonical).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def fingerprint(world) -> int:
    """Fingerprint of a paused world's declared state."""
    return digest(world.canonical_state())


_PATH_RE = r"^$|^[1-9][0-9]*(:[0-9]+)?(;[1-9][0-9]*(:[0-9]+)?)*$"

REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["program", "verdict", "message", "path", "lasso", "stats"],
    "additionalProperties": False,
    "properties": {
        "program": {"type": "string"},
        "verdict": {"enum": [k.value for k in VerdictKind]},
        "message": {"type": ["string", "null"]},
        "path": {"type": "string", "pattern": _PATH_RE},
        "lasso": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["prefix", "cycle"],
                    "additionalProperties": False,
                    "properties": {
                        "prefix": {"type": "string", "pattern": _PATH_RE},
                        "cycle": {"type": "string", "pattern": _PATH_RE, "minLength": 1},
                    },
                },
            ]
        },
        "stats": {
            "type": "object",
            "required": ["expanded", "visited", "transitions", "max_depth_hit"],
            "additionalProperties": False,
            "properties": {
                "expanded": {"type": "integer", "minimum": 0},
                "visited": {"type": "integer", "minimum": 1},
                "transitions": {"type": "integer", "minimum": 0},
                "max_depth_hit": {"type": "boolean"},
            },
        },
        "min_depth": {"type": "integer", "minimum": 1},
    },
}
