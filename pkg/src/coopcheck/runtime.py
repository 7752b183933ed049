"""Cooperative execution engine and the API that program threads call.

Every program thread runs on its own greenlet. Exactly one of them executes at
a time: a thread runs until it reaches a scheduling point (lock, unlock,
semaphore wait/post, yield, join, CAS, choose, exit), records the action it
is *about* to perform and switches back to whoever resumed it. The
controller later performs that pending action on the thread's behalf and
resumes it, so a transition is "pending action + run to the next scheduling
point". Cell reads and writes are plain calls and never switch.

Program bodies look like ordinary sequential code::

    def worker(t, g):
        while True:
            t.lock(g.m2)
            t.lock(g.m1)
            t.unlock(g.m1)
            t.unlock(g.m2)
"""

from __future__ import annotations

import enum
import functools
import os
import sys
import traceback
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import greenlet

from .model import MAIN_TID, digest

MAX_THREADS = 16
MAX_CHOICES = 16
MAX_ARENA = 1 << 20
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
MASK64 = (1 << 64) - 1
DEFAULT_SEED = 42
SEED_ENV = "COOPCHECK_SEED"
TRAIL_LEN = 8


class SetupError(Exception):
    """The program's declarations are invalid (raised before any thread runs)."""


class ControllerError(RuntimeError):
    """The controller scheduled something that is not schedulable."""


# Raised inside program threads. BaseException so that a body's own
# ``except Exception`` cannot swallow them.
class _Fault(BaseException):
    pass


class _AssertFail(BaseException):
    pass


class _Exit(BaseException):
    pass


class _Propagate(BaseException):
    """A child failed during ``spawn``; the failure ends the parent's transition."""


_PAUSED = object()
_EXIT = object()


class ActionKind(enum.Enum):
    LOCK = "Lock"
    UNLOCK = "Unlock"
    SEM_WAIT = "SemWait"
    SEM_POST = "SemPost"
    YIELD = "Yield"
    JOIN = "Join"
    CAS = "Cas"
    CHOOSE = "Choose"
    EXIT = "Exit"


@dataclass(frozen=True, slots=True)
class Ref:
    """A shared memory location: a declared cell or an arena slot."""

    kind: str  # "cell" | "slot"
    index: int


@dataclass(frozen=True, slots=True)
class SyncRef:
    index: int


class Arena:
    """Fixed-length array of int64 slots; ``arena[i]`` is a reference, not a value."""

    def __init__(self, name: str, length: int):
        self.name = name
        self.length = length

    def __getitem__(self, index: int) -> Ref:
        return Ref("slot", int(index))

    def __len__(self) -> int:
        return self.length


class Action(NamedTuple):
    kind: ActionKind
    site: str
    operands: tuple = ()


class SyncKind(enum.Enum):
    MUTEX = "Mutex"
    SEMAPHORE = "Semaphore"


@dataclass
class SyncObject:
    index: int
    kind: SyncKind
    name: str
    owner: int | None = None
    count: int = 0


class OutcomeKind(enum.Enum):
    PAUSED = "Paused"
    TERMINATED = "ThreadTerminated"
    ASSERT_FAILED = "AssertFailed"
    RUNTIME_FAULT = "RuntimeFault"

    @property
    def is_failure(self) -> bool:
        return self in _FAILURES


_FAILURES = frozenset({OutcomeKind.ASSERT_FAILED, OutcomeKind.RUNTIME_FAULT})


class StepOutcome(NamedTuple):
    kind: OutcomeKind
    tid: int
    message: str | None = None
    trail: tuple[str, ...] = ()

    @property
    def failed(self) -> bool:
        return self.kind in _FAILURES


@dataclass
class ThreadRecord:
    tid: int
    glet: greenlet.greenlet | None = None
    api: Thread | None = None
    pending: Action | None = None
    terminated: bool = False
    trail: deque = field(default_factory=lambda: deque(maxlen=TRAIL_LEN))


@dataclass
class ProgramSpec:
    """A checkable program.

    ``setup(builder)`` declares cells, the arena, sync objects and symbols and
    returns the globals object handed to every thread body. ``main(t, g)`` is
    the body of thread 1.
    """

    name: str
    setup: Callable[[Builder], Any]
    main: Callable[..., Any]
    description: str = ""


def _caller_site(depth: int) -> str:
    f = sys._getframe(depth)
    return f"{f.f_code.co_name}:{f.f_lineno}"


def xorshift64star(state: int) -> tuple[int, int]:
    """One xorshift64* step: returns ``(new_state, output)``."""
    x = state
    x ^= x >> 12
    x ^= (x << 25) & MASK64
    x ^= x >> 27
    return x, (x * 0x2545F4914F6CDD1D) & MASK64


class Builder:
    """Declaration interface passed to a program's setup hook."""

    def __init__(self, world: World):
        self._w = world

    def cell(self, name: str, init: int = 0) -> Ref:
        w = self._w
        if name in w.cell_index:
            raise SetupError(f"duplicate cell {name!r}")
        w.cell_index[name] = len(w.cells)
        w.cell_names.append(name)
        w.cells.append(_as_int64(init))
        return Ref("cell", len(w.cells) - 1)

    def arena(self, length: int, init=0, name: str = "arena") -> Arena:
        w = self._w
        if w.arena_obj is not None:
            raise SetupError("only one arena per program")
        if not 1 <= length <= MAX_ARENA:
            raise SetupError(f"arena length must be in [1, {MAX_ARENA}]")
        if isinstance(init, int):
            slots = [_as_int64(init)] * length
        else:
            slots = [_as_int64(v) for v in init]
            if len(slots) != length:
                raise SetupError("arena initializer has the wrong length")
        w.arena = slots
        w.arena_obj = Arena(name, length)
        return w.arena_obj

    def mutex(self, name: str) -> SyncRef:
        return self._sync(name, SyncKind.MUTEX, 0)

    def semaphore(self, name: str, count: int = 0) -> SyncRef:
        if count < 0:
            raise SetupError("semaphore count must be non-negative")
        return self._sync(name, SyncKind.SEMAPHORE, count)

    def _sync(self, name, kind, count) -> SyncRef:
        w = self._w
        if any(s.name == name for s in w.sync):
            raise SetupError(f"duplicate sync object {name!r}")
        w.sync.append(SyncObject(len(w.sync), kind, name, None, count))
        return SyncRef(len(w.sync) - 1)

    def symbol(self, name: str, ref: Ref) -> None:
        """Register a propositional symbol, true iff the cell is non-zero."""
        w = self._w
        if name in w.symbols:
            raise SetupError(f"duplicate symbol {name!r}")
        w._check_ref(ref, setup=True)
        w.symbols[name] = ref

    def seed(self, value: int) -> None:
        if not 0 < value <= MASK64:
            raise SetupError("PRNG seed must be a non-zero 64-bit value")
        self._w.prng_state = value


def _as_int64(v) -> int:
    v = int(v)
    if not INT64_MIN <= v <= INT64_MAX:
        raise _Fault(f"value {v} does not fit in int64")
    return v


class Thread:
    """API handle given to a program thread body as its first argument.

    Methods that are scheduling points take an optional ``site`` label; by
    default the site is the calling function and line number.
    """

    __slots__ = ("tid", "_w")

    def __init__(self, world: World, tid: int):
        self._w = world
        self.tid = tid

    # -- scheduling points -------------------------------------------------

    def _pause(self, action: Action):
        w = self._w
        if w.closed:
            raise greenlet.GreenletExit
        rec = w.threads[self.tid - 1]
        rec.trail.append(action.site)
        rec.pending = action
        value = rec.glet.parent.switch(_PAUSED)
        if value is _EXIT:
            raise _Exit
        return value

    def sched_yield(self, site=None) -> None:
        self._pause(Action(ActionKind.YIELD, site or _caller_site(2)))

    def lock(self, m: SyncRef, site=None) -> None:
        site = site or _caller_site(2)
        obj = self._w._sync_obj(m, SyncKind.MUTEX, site, self.tid)
        if obj.owner == self.tid:
            self._fault(site, f"non-recursive mutex relock of {obj.name}")
        self._pause(Action(ActionKind.LOCK, site, (m.index,)))

    def unlock(self, m: SyncRef, site=None) -> None:
        site = site or _caller_site(2)
        obj = self._w._sync_obj(m, SyncKind.MUTEX, site, self.tid)
        if obj.owner != self.tid:
            self._fault(site, f"unlock without ownership of {obj.name}")
        self._pause(Action(ActionKind.UNLOCK, site, (m.index,)))

    def sem_wait(self, s: SyncRef, site=None) -> None:
        site = site or _caller_site(2)
        self._w._sync_obj(s, SyncKind.SEMAPHORE, site, self.tid)
        self._pause(Action(ActionKind.SEM_WAIT, site, (s.index,)))

    def sem_post(self, s: SyncRef, site=None) -> None:
        site = site or _caller_site(2)
        self._w._sync_obj(s, SyncKind.SEMAPHORE, site, self.tid)
        self._pause(Action(ActionKind.SEM_POST, site, (s.index,)))

    def join(self, tid: int, site=None) -> None:
        site = site or _caller_site(2)
        if tid == self.tid or not 1 <= tid <= len(self._w.threads):
            self._fault(site, f"join of invalid thread {tid}")
        self._pause(Action(ActionKind.JOIN, site, (tid,)))

    def cas(self, ref: Ref, expected: int, desired: int, site=None) -> bool:
        """Atomic compare-and-swap; the whole read-compare-write is one transition."""
        site = site or _caller_site(2)
        self._w._check_ref(ref, site=site, tid=self.tid)
        return self._pause(
            Action(ActionKind.CAS, site, (ref, _as_int64(expected), _as_int64(desired)))
        )

    def choose(self, n: int, site=None) -> int:
        site = site or _caller_site(2)
        if not 1 <= n <= MAX_CHOICES:
            self._fault(site, f"choose({n}) outside [1, {MAX_CHOICES}]")
        return self._pause(Action(ActionKind.CHOOSE, site, (n,)))

    def exit(self, site=None) -> None:
        self._pause(Action(ActionKind.EXIT, site or _caller_site(2)))

    # -- non-switching operations -----------------------------------------

    def spawn(self, body: Callable[..., Any], *args) -> int:
        """Start a thread; it runs to its first scheduling point before this returns."""
        w = self._w
        if len(w.threads) >= MAX_THREADS:
            self._fault(_caller_site(2), f"thread limit ({MAX_THREADS}) exceeded")
        rec = w._new_thread(body, args)
        res = rec.glet.switch()
        if w._settle(rec, res).failed:
            raise _Propagate(res)
        return rec.tid

    def read(self, ref: Ref) -> int:
        w = self._w
        if w.auto_yield:
            self._pause(Action(ActionKind.YIELD, _caller_site(2)))
        store = w._store(ref, self.tid)
        return store[ref.index]

    def write(self, ref: Ref, value: int) -> None:
        w = self._w
        if w.auto_yield:
            self._pause(Action(ActionKind.YIELD, _caller_site(2)))
        store = w._store(ref, self.tid)
        if value.__class__ is not int or not INT64_MIN <= value <= INT64_MAX:
            value = _as_int64(value)
        store[ref.index] = value

    def mc_assert(self, cond, message: str = "assertion failed", site=None) -> None:
        if not cond:
            self._w.threads[self.tid - 1].trail.append(site or _caller_site(2))
            raise _AssertFail(message)

    def rand(self) -> int:
        """Next value of the world's deterministic xorshift64* generator."""
        w = self._w
        w.prng_state, out = xorshift64star(w.prng_state)
        return out

    def _fault(self, site: str, message: str):
        self._w.threads[self.tid - 1].trail.append(site)
        raise _Fault(message)

    @property
    def g(self):
        return self._w.g


def _thread_main(world: World, rec: ThreadRecord, body, args):
    try:
        body(rec.api, world.g, *args)
    except _Exit:
        pass
    except _Propagate as e:
        return e.args[0]
    except _AssertFail as e:
        return ("assert", rec.tid, str(e), tuple(rec.trail))
    except AssertionError as e:
        rec.trail.append(_tb_site(e))
        return ("assert", rec.tid, str(e) or "assertion failed", tuple(rec.trail))
    except _Fault as e:
        return ("fault", rec.tid, str(e), tuple(rec.trail))
    except Exception as e:
        rec.trail.append(_tb_site(e))
        return ("fault", rec.tid, f"{type(e).__name__}: {e}", tuple(rec.trail))
    return ("exit",)


def _tb_site(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    if not frames:
        return "?"
    last = frames[-1]
    return f"{last.name}:{last.lineno}"


class World:
    """Complete checker-visible state of one program execution."""

    def __init__(self, program: ProgramSpec, auto_yield: bool = False):
        self.program = program
        self.auto_yield = auto_yield
        self.cells: list[int] = []
        self.cell_names: list[str] = []
        self.cell_index: dict[str, int] = {}
        self.arena: list[int] = []
        self.arena_obj: Arena | None = None
        self.sync: list[SyncObject] = []
        self.symbols: dict[str, Ref] = {}
        self.threads: list[ThreadRecord] = []
        self.prng_state = DEFAULT_SEED
        self.step_count = 0
        self.dead = False
        self.closed = False
        self.g: Any = None
        self.init_outcome: StepOutcome

        try:
            self.g = program.setup(Builder(self))
        except SetupError:
            raise
        except _Fault as e:
            self._die_in_setup(str(e))
            return
        except Exception as e:
            self._die_in_setup(f"{type(e).__name__}: {e}")
            return
        env_seed = os.environ.get(SEED_ENV)
        if env_seed:
            seed = int(env_seed, 0)
            if not 0 < seed <= MASK64:
                raise SetupError(f"{SEED_ENV} must be a non-zero 64-bit value")
            self.prng_state = seed

        rec = self._new_thread(program.main, ())
        self.init_outcome = self._settle(rec, rec.glet.switch())
        if self.init_outcome.failed:
            self.dead = True

    def _die_in_setup(self, message: str) -> None:
        self.init_outcome = StepOutcome(OutcomeKind.RUNTIME_FAULT, MAIN_TID, f"setup: {message}")
        self.dead = True

    # -- thread plumbing ---------------------------------------------------

    def _new_thread(self, body, args) -> ThreadRecord:
        tid = len(self.threads) + 1
        rec = ThreadRecord(tid)
        rec.api = Thread(self, tid)
        rec.glet = greenlet.greenlet(functools.partial(_thread_main, self, rec, body, args))
        self.threads.append(rec)
        return rec

    def _settle(self, rec: ThreadRecord, res) -> StepOutcome:
        if res is _PAUSED:
            return StepOutcome(OutcomeKind.PAUSED, rec.tid)
        tag = res[0]
        if tag == "exit":
            rec.terminated = True
            rec.pending = None
            rec.glet = None
            return StepOutcome(OutcomeKind.TERMINATED, rec.tid)
        kind = OutcomeKind.ASSERT_FAILED if tag == "assert" else OutcomeKind.RUNTIME_FAULT
        return StepOutcome(kind, res[1], res[2], res[3])

    def _store(self, ref: Ref, tid: int) -> list[int]:
        if ref.__class__ is Ref:
            store = self.cells if ref.kind == "cell" else self.arena
            if 0 <= ref.index < len(store):
                return store
        self._check_ref(ref, tid=tid)

    def _check_ref(self, ref: Ref, site=None, tid=None, setup=False) -> None:
        if not isinstance(ref, Ref):
            msg = f"not a cell or arena reference: {ref!r}"
        elif ref.kind == "cell" and 0 <= ref.index < len(self.cells):
            return
        elif ref.kind == "slot" and 0 <= ref.index < len(self.arena):
            return
        else:
            msg = f"{self.ref_name(ref)} out of range"
        if setup:
            raise SetupError(msg)
        if site is not None:
            self.threads[tid - 1].trail.append(site)
        raise _Fault(msg)

    def _sync_obj(self, ref: SyncRef, kind: SyncKind, site: str, tid: int) -> SyncObject:
        if isinstance(ref, SyncRef) and 0 <= ref.index < len(self.sync):
            obj = self.sync[ref.index]
            if obj.kind is kind:
                return obj
            msg = f"{obj.name} is a {obj.kind.value}, not a {kind.value}"
        else:
            msg = f"unknown sync object {ref!r}"
        self.threads[tid - 1].trail.append(site)
        raise _Fault(msg)

    # -- controller API ----------------------------------------------------

    def is_enabled(self, rec: ThreadRecord) -> bool:
        a = rec.pending
        if rec.terminated or a is None:
            return False
        k = a.kind
        if k is ActionKind.LOCK:
            return self.sync[a.operands[0]].owner is None
        if k is ActionKind.SEM_WAIT:
            return self.sync[a.operands[0]].count > 0
        if k is ActionKind.JOIN:
            return self.threads[a.operands[0] - 1].terminated
        return True

    def enabled_steps(self) -> list[tuple[int, int]]:
        """``(tid, branch_count)`` for every enabled thread, ascending tid."""
        if self.dead:
            return []
        out = []
        for rec in self.threads:
            if self.is_enabled(rec):
                a = rec.pending
                out.append((rec.tid, a.operands[0] if a.kind is ActionKind.CHOOSE else 1))
        return out

    def live_threads(self) -> list[int]:
        return [r.tid for r in self.threads if not r.terminated]

    def execute_step(self, tid: int, choice: int | None = None) -> StepOutcome:
        if self.dead:
            raise ControllerError("world has already failed")
        if not 1 <= tid <= len(self.threads):
            raise ControllerError(f"no thread {tid}")
        rec = self.threads[tid - 1]
        if rec.terminated:
            raise ControllerError(f"thread {tid} has terminated")
        if not self.is_enabled(rec):
            raise ControllerError(f"thread {tid} is blocked on {self.describe(rec.pending)}")
        a = rec.pending
        k = a.kind
        if k is ActionKind.CHOOSE:
            if choice is None or not 0 <= choice < a.operands[0]:
                raise ControllerError(f"thread {tid}: invalid choice {choice} for {self.describe(a)}")
        elif choice is not None:
            raise ControllerError(f"thread {tid}: choice given for {self.describe(a)}")

        value = None
        if k is ActionKind.LOCK:
            self.sync[a.operands[0]].owner = tid
        elif k is ActionKind.UNLOCK:
            self.sync[a.operands[0]].owner = None
        elif k is ActionKind.SEM_WAIT:
            self.sync[a.operands[0]].count -= 1
        elif k is ActionKind.SEM_POST:
            self.sync[a.operands[0]].count += 1
        elif k is ActionKind.CAS:
            ref, expected, desired = a.operands
            store = self.cells if ref.kind == "cell" else self.arena
            value = store[ref.index] == expected
            if value:
                store[ref.index] = desired
        elif k is ActionKind.CHOOSE:
            value = choice
        elif k is ActionKind.EXIT:
            value = _EXIT

        rec.pending = None
        self.step_count += 1
        glet = rec.glet
        glet.parent = greenlet.getcurrent()
        out = self._settle(rec, glet.switch(value))
        if out.kind in _FAILURES:
            self.dead = True
        return out

    def close(self) -> None:
        """Unwind all suspended thread greenlets."""
        if self.closed:
            return
        self.closed = True
        for rec in self.threads:
            g = rec.glet
            if g is not None and not g.dead:
                g.parent = greenlet.getcurrent()
                try:
                    g.throw(greenlet.GreenletExit)
                except greenlet.GreenletExit:
                    pass
            rec.glet = None

    # -- inspection --------------------------------------------------------

    def canonical_state(self) -> tuple:
        threads = []
        for r in self.threads:
            if r.terminated:
                threads.append((r.tid, "T"))
            elif r.pending is None:
                threads.append((r.tid, "?"))
            else:
                a = r.pending
                ops = tuple((o.kind, o.index) if isinstance(o, Ref) else o for o in a.operands)
                threads.append((r.tid, a.kind.value, a.site, ops))
        return (
            tuple(self.cells),
            tuple(self.arena),
            tuple((s.owner, s.count) for s in self.sync),
            tuple(threads),
            self.prng_state,
        )

    def fingerprint(self) -> int:
        return digest(self.canonical_state())

    def symbol_value(self, name: str) -> bool:
        ref = self.symbols[name]
        store = self.cells if ref.kind == "cell" else self.arena
        return store[ref.index] != 0

    def valuation(self) -> dict[str, bool]:
        return {name: self.symbol_value(name) for name in self.symbols}

    def ref_name(self, ref) -> str:
        if isinstance(ref, Ref):
            if ref.kind == "cell":
                if 0 <= ref.index < len(self.cell_names):
                    return self.cell_names[ref.index]
                return f"cell#{ref.index}"
            name = self.arena_obj.name if self.arena_obj else "arena"
            return f"{name}[{ref.index}]"
        return repr(ref)

    def read_ref(self, ref: Ref) -> int:
        store = self.cells if ref.kind == "cell" else self.arena
        return store[ref.index]

    def describe(self, a: Action | None) -> str:
        if a is None:
            return "-"
        k = a.kind
        if k in (ActionKind.LOCK, ActionKind.UNLOCK, ActionKind.SEM_WAIT, ActionKind.SEM_POST):
            return f"{k.value}({self.sync[a.operands[0]].name})"
        if k is ActionKind.CAS:
            ref, e, d = a.operands
            return f"Cas({self.ref_name(ref)}, {e}, {d})"
        if k in (ActionKind.JOIN, ActionKind.CHOOSE):
            return f"{k.value}({a.operands[0]})"
        return k.value


def init_world(program: ProgramSpec, auto_yield: bool = False) -> World:
    """Run setup, then main (and anything it spawns) to the first scheduling points."""
    return World(program, auto_yield=auto_yield)


reset = init_world
