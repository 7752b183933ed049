"""Built-in programs: the classic case studies and their fixed/reduced variants.

Thread-local state that lives across a scheduling point is kept in declared
cells (named ``t<k>.<var>``) so that state fingerprints see all of it.
"""

from __future__ import annotations

from types import SimpleNamespace

from .runtime import ProgramSpec

# ---------------------------------------------------------------------------
# mutex-deadlock: two threads take two mutexes in opposite order, forever.
# ---------------------------------------------------------------------------


def _md_setup(b):
    return SimpleNamespace(mutex1=b.mutex("mutex1"), mutex2=b.mutex("mutex2"))


def _md_thread2(t, g):
    while True:
        t.lock(g.mutex2)
        t.lock(g.mutex1)
        t.unlock(g.mutex1)
        t.unlock(g.mutex2)


def _md_main(t, g):
    t.spawn(_md_thread2)
    while True:
        t.lock(g.mutex1)
        t.lock(g.mutex2)
        t.unlock(g.mutex2)
        t.unlock(g.mutex1)


def _mds_setup(b):
    return SimpleNamespace(sem1=b.semaphore("sem1", 1), sem2=b.semaphore("sem2", 1))


def _mds_thread2(t, g):
    while True:
        t.sem_wait(g.sem2)
        t.sem_wait(g.sem1)
        t.sem_post(g.sem1)
        t.sem_post(g.sem2)


def _mds_main(t, g):
    t.spawn(_mds_thread2)
    while True:
        t.sem_wait(g.sem1)
        t.sem_wait(g.sem2)
        t.sem_post(g.sem2)
        t.sem_post(g.sem1)


# ---------------------------------------------------------------------------
# hello-shared-memory: naive leader election over two flags.
# ---------------------------------------------------------------------------


def _hello_setup(b):
    return SimpleNamespace(val1=b.cell("val1"), val2=b.cell("val2"))


def _hello_thread2(t, g):
    t.sched_yield()  # before reading val1
    if not t.read(g.val1):
        t.sched_yield()  # before writing val2
        t.write(g.val2, 1)
    t.mc_assert(not (t.read(g.val1) and t.read(g.val2)), "not (val1 and val2)")


def _hello_main(t, g):
    t.spawn(_hello_thread2)
    t.sched_yield()  # before reading val2
    if not t.read(g.val2):
        t.sched_yield()  # before writing val1
        t.write(g.val1, 1)
    t.mc_assert(not (t.read(g.val1) and t.read(g.val2)), "not (val1 and val2)")


def _hello_ny_thread2(t, g):
    if not t.read(g.val1):
        t.write(g.val2, 1)
    t.mc_assert(not (t.read(g.val1) and t.read(g.val2)), "not (val1 and val2)")


def _hello_ny_main(t, g):
    t.spawn(_hello_ny_thread2)
    if not t.read(g.val2):
        t.write(g.val1, 1)
    t.mc_assert(not (t.read(g.val1) and t.read(g.val2)), "not (val1 and val2)")


# ---------------------------------------------------------------------------
# priority-inversion: high/medium/low priority tasks sharing two locks.
# Thread ids: main 1, high 2, medium 3 (when present), low last.
# ---------------------------------------------------------------------------

PUMP_ROUNDS = 10


def _pi_setup(b):
    g = SimpleNamespace(
        task_lock=b.mutex("task_lock"),
        bus_lock=b.mutex("bus_lock"),
        priority1_interrupt=b.cell("priority1_interrupt"),
        priority2_interrupt=b.cell("priority2_interrupt"),
        task1_event=b.cell("task1_event"),
        task2_event=b.cell("task2_event"),
        task3_event=b.cell("task3_event"),
        r=b.cell("r"),
        cs=b.cell("cs"),
        pump_round=b.cell("t1.i"),
    )
    b.symbol("r", g.r)
    b.symbol("cs", g.cs)
    return g


def _pi_high(t, g):
    while True:
        t.sched_yield()  # before reading a shared variable
        if t.read(g.task3_event):
            t.write(g.r, 1)
            t.write(g.cs, 0)
            t.sched_yield()  # before writing a shared variable
            t.write(g.priority1_interrupt, 1)  # ask low to release task_lock, bus_lock
            t.lock(g.task_lock)
            t.lock(g.bus_lock)
            t.write(g.cs, 1)
            t.sched_yield()  # before writing a shared variable
            t.write(g.priority1_interrupt, 0)
            t.unlock(g.bus_lock)
            t.unlock(g.task_lock)
            t.write(g.cs, 0)
            t.write(g.r, 0)


def _pi_medium(t, g):
    while True:
        t.sched_yield()  # before reading a shared variable
        while t.read(g.task2_event):
            t.sched_yield()  # before writing a shared variable
            t.write(g.priority2_interrupt, 1)  # ask low to release task_lock
            t.lock(g.task_lock)
            t.sched_yield()  # before reading a shared variable
            if t.read(g.priority1_interrupt):
                t.unlock(g.task_lock)
                t.lock(g.task_lock)
            t.sched_yield()  # before writing a shared variable
            t.write(g.task2_event, 0)
            t.write(g.priority2_interrupt, 0)
            t.sched_yield()  # before reading a shared variable
            t.unlock(g.task_lock)


def _pi_low(t, g):
    t.sched_yield()  # before reading a shared variable
    while t.read(g.task3_event):
        t.lock(g.task_lock)
        t.lock(g.bus_lock)
        t.sched_yield()  # before reading a shared variable
        if t.read(g.priority1_interrupt) or t.read(g.priority2_interrupt):
            # a higher priority task wants the lock
            t.unlock(g.task_lock)
            while True:
                t.sched_yield()  # before reading a shared variable
                if not t.read(g.priority1_interrupt) and not t.read(g.priority2_interrupt):
                    break
            t.lock(g.task_lock)
        t.sched_yield()  # before writing a shared variable
        t.write(g.task3_event, 0)
        t.unlock(g.bus_lock)
        t.unlock(g.task_lock)


def _pi_pump(t, g):
    while t.read(g.pump_round) < PUMP_ROUNDS:
        t.sched_yield()
        t.write(g.task1_event, 1)
        t.sched_yield()
        t.write(g.task2_event, 1)
        t.sched_yield()
        t.write(g.task3_event, 1)
        t.sched_yield()
        t.write(g.pump_round, t.read(g.pump_round) + 1)


def _pi_main(t, g):
    t.spawn(_pi_high)
    t.spawn(_pi_medium)
    t.spawn(_pi_low)
    _pi_pump(t, g)


def _pi_main_no_medium(t, g):
    t.spawn(_pi_high)
    t.spawn(_pi_low)
    _pi_pump(t, g)


# ---------------------------------------------------------------------------
# aba-stack: lock-free free list over an arena of next-indices.
# ---------------------------------------------------------------------------

ARENA_SLOTS = 32
MAX_HOPS = 64
EMPTY = -1
POISON = 0x5A5A_5A5A_5A5A_5A5A
SCRIPTS = {
    1: ("alloc", "dealloc", "alloc", "alloc", "dealloc"),
    2: ("alloc", "alloc", "dealloc", "alloc", "dealloc"),
}
_LOW32 = 0xFFFF_FFFF


def pack(index: int, version: int) -> int:
    """Version-tagged head pointer: version in the high half, index+1 in the low."""
    return (version << 32) | ((index + 1) & _LOW32)


def unpack(word: int) -> tuple[int, int]:
    return (word & _LOW32) - 1, word >> 32


def _aba_setup(b, tagged: bool, tids=(1, 2)):
    nxt = b.arena(ARENA_SLOTS, init=list(range(1, ARENA_SLOTS)) + [EMPTY], name="next")
    root = b.cell("_root", pack(0, 0) if tagged else 0)
    regs = {}
    for k in tids:
        script = SCRIPTS[k]
        regs[k] = SimpleNamespace(
            op=b.cell(f"t{k}.op"),
            item=b.cell(f"t{k}.item", EMPTY),
            old=b.cell(f"t{k}.old"),
            nheld=b.cell(f"t{k}.nheld"),
            held=[b.cell(f"t{k}.held[{i}]", EMPTY) for i in range(len(script))],
            script=script,
        )
    return SimpleNamespace(next=nxt, root=root, regs=regs, tagged=tagged)


def _root_index(t, g) -> int:
    v = t.read(g.root)
    return unpack(v)[0] if g.tagged else v


def check_free_list(t, g) -> None:
    """Walk the free list from the head; it must end within MAX_HOPS on clean slots."""
    idx = _root_index(t, g)
    hops = 0
    while idx != EMPTY:
        t.mc_assert(0 <= idx < ARENA_SLOTS, f"free list reaches invalid index {idx}")
        hops += 1
        t.mc_assert(hops <= MAX_HOPS, f"free list longer than {MAX_HOPS} hops")
        nxt = t.read(g.next[idx])
        t.mc_assert(nxt != POISON, f"free list reaches allocated item {idx}")
        idx = nxt


def allocate(t, g, regs) -> int:
    while True:
        t.sched_yield()  # _root is shared
        t.write(regs.item, t.read(g.root))
        t.sched_yield()  # _root, item and item->next are shared
        if _root_index(t, g) == EMPTY:
            continue
        if g.tagged:
            old = t.read(regs.item)
            item, version = unpack(old)
            if t.cas(g.root, old, pack(t.read(g.next[item]), version + 1)):
                break
        else:
            item = t.read(regs.item)
            if t.cas(g.root, item, t.read(g.next[item])):
                break
    t.mc_assert(t.read(g.next[item]) != POISON, f"item {item} allocated twice")
    t.write(g.next[item], POISON)
    check_free_list(t, g)
    return item


def deallocate(t, g, regs, item: int) -> None:
    t.write(regs.item, item)
    while True:
        t.sched_yield()  # _root is shared
        head = t.read(g.root)
        t.write(regs.old, head)
        t.write(g.next[item], unpack(head)[0] if g.tagged else head)
        t.sched_yield()  # _root, item and item->next are shared
        if g.tagged:
            old = t.read(regs.old)
            if t.cas(g.root, old, pack(item, unpack(old)[1])):
                break
        elif t.cas(g.root, t.read(g.next[item]), item):
            break
    check_free_list(t, g)


def _aba_tester(t, g, k):
    regs = g.regs[k]
    while (op := t.read(regs.op)) < len(regs.script):
        n = t.read(regs.nheld)
        if regs.script[op] == "alloc":
            item = allocate(t, g, regs)
            t.write(regs.held[n], item)
            t.write(regs.nheld, n + 1)
        elif n > 0:
            pick = t.choose(n)
            item = t.read(regs.held[pick])
            for i in range(pick, n - 1):
                t.write(regs.held[i], t.read(regs.held[i + 1]))
            t.write(regs.held[n - 1], EMPTY)
            t.write(regs.nheld, n - 1)
            deallocate(t, g, regs, item)
        t.write(regs.op, op + 1)


def _aba_main(t, g):
    t.spawn(_aba_tester, 2)
    _aba_tester(t, g, 1)


def _aba_main_single(t, g):
    _aba_tester(t, g, 1)


# ---------------------------------------------------------------------------

PROGRAMS: dict[str, ProgramSpec] = {}


def register(program: ProgramSpec) -> ProgramSpec:
    PROGRAMS[program.name] = program
    return program


register(ProgramSpec(
    "mutex-deadlock", _md_setup, _md_main,
    "two threads lock two mutexes in opposite order (deadly embrace)",
))
register(ProgramSpec(
    "mutex-deadlock-sem", _mds_setup, _mds_main,
    "mutex-deadlock with binary semaphores in place of mutexes",
))
register(ProgramSpec(
    "hello-shared-memory", _hello_setup, _hello_main,
    "naive leader election over two shared flags, yields before each access",
))
register(ProgramSpec(
    "hello-no-yield", _hello_setup, _hello_ny_main,
    "hello-shared-memory without yields; each thread body is one transition",
))
register(ProgramSpec(
    "priority-inversion", _pi_setup, _pi_main,
    "high/medium/low priority tasks over task_lock and bus_lock; symbols r, cs",
))
register(ProgramSpec(
    "priority-inversion-no-medium", _pi_setup, _pi_main_no_medium,
    "priority-inversion with the medium priority thread removed",
))
register(ProgramSpec(
    "aba-stack", lambda b: _aba_setup(b, tagged=False), _aba_main,
    "lock-free free-list allocator, two threads, CAS on a bare head index",
))
register(ProgramSpec(
    "aba-stack-fixed", lambda b: _aba_setup(b, tagged=True), _aba_main,
    "aba-stack with a version-tagged head (CAS on index+version)",
))
register(ProgramSpec(
    "aba-stack-single", lambda b: _aba_setup(b, tagged=False, tids=(1,)), _aba_main_single,
    "aba-stack with only the main thread",
))


def get_program(name: str) -> ProgramSpec:
    try:
        return PROGRAMS[name]
    except KeyError:
        raise KeyError(f"unknown program {name!r}; available: {', '.join(sorted(PROGRAMS))}") from None
