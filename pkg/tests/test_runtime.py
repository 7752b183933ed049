from types import SimpleNamespace

import numpy as np
import pytest

from conftest import program
from coopcheck.runtime import (
    DEFAULT_SEED,
    MAX_THREADS,
    SEED_ENV,
    ActionKind,
    ControllerError,
    OutcomeKind,
    SetupError,
    init_world,
    reset,
    xorshift64star,
)

# first three xorshift64* outputs for seed 42, from the numpy oracle below
PRNG_GOLDEN = [6255019084209693600, 14430073426741505498, 14575455857230217846]


def numpy_xorshift(seed, n):
    x = np.uint64(seed)
    out = []
    with np.errstate(over="ignore"):
        for _ in range(n):
            x ^= x >> np.uint64(12)
            x ^= x << np.uint64(25)
            x ^= x >> np.uint64(27)
            out.append(int(x * np.uint64(0x2545F4914F6CDD1D)))
    return out


def test_prng_matches_oracle():
    assert numpy_xorshift(DEFAULT_SEED, 3) == PRNG_GOLDEN
    s, got = DEFAULT_SEED, []
    for _ in range(50):
        s, o = xorshift64star(s)
        got.append(o)
    assert got == numpy_xorshift(DEFAULT_SEED, 50)


def _rand_prog(seed=None):
    def setup(b):
        if seed is not None:
            b.seed(seed)
        return SimpleNamespace(out=b.arena(3))

    def main(t, g):
        for i in range(3):
            t.write(g.out[i], t.rand() & 0x7FFFFFFFFFFFFFFF)
            t.sched_yield()

    return program(main, setup)


def _drain(w):
    while w.live_threads() and not w.dead:
        w.execute_step(w.enabled_steps()[0][0])
    return w


def test_rand_in_program_uses_default_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    w = _drain(init_world(_rand_prog()))
    assert w.arena == [v & 0x7FFFFFFFFFFFFFFF for v in PRNG_GOLDEN]


def test_seed_override(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "7")
    w = _drain(init_world(_rand_prog()))
    assert w.arena == [v & 0x7FFFFFFFFFFFFFFF for v in numpy_xorshift(7, 3)]
    monkeypatch.delenv(SEED_ENV)
    w = _drain(init_world(_rand_prog(seed=9)))
    assert w.arena == [v & 0x7FFFFFFFFFFFFFFF for v in numpy_xorshift(9, 3)]


def test_spawn_runs_child_to_first_pause():
    order = []

    def child(t, g):
        order.append("child-start")
        t.sched_yield()
        order.append("child-end")

    def main(t, g):
        tid = t.spawn(child)
        order.append(("spawned", tid))
        t.sched_yield()

    w = init_world(program(main))
    assert order == ["child-start", ("spawned", 2)]
    assert [r.pending.kind for r in w.threads] == [ActionKind.YIELD, ActionKind.YIELD]
    assert w.enabled_steps() == [(1, 1), (2, 1)]
    out = w.execute_step(2)
    assert out.kind is OutcomeKind.TERMINATED and order[-1] == "child-end"
    assert w.live_threads() == [1]


def test_lock_enabledness_and_deadlock_shape():
    def setup(b):
        return SimpleNamespace(m=b.mutex("m"))

    def child(t, g):
        t.lock(g.m)
        t.unlock(g.m)

    def main(t, g):
        t.spawn(child)
        t.lock(g.m)
        t.sched_yield()
        t.unlock(g.m)

    w = init_world(program(main, setup))
    w.execute_step(1)  # main takes m
    assert w.sync[0].owner == 1
    assert [tid for tid, _ in w.enabled_steps()] == [1]
    with pytest.raises(ControllerError):
        w.execute_step(2)
    w.execute_step(1)
    w.execute_step(1)  # unlock, main terminates
    assert w.sync[0].owner is None
    assert [tid for tid, _ in w.enabled_steps()] == [2]


def test_semaphore_counts():
    def setup(b):
        return SimpleNamespace(s=b.semaphore("s", 0))

    def child(t, g):
        t.sem_wait(g.s)

    def main(t, g):
        t.spawn(child)
        t.sem_post(g.s)

    w = init_world(program(main, setup))
    assert [tid for tid, _ in w.enabled_steps()] == [1]
    w.execute_step(1)
    assert w.sync[0].count == 1
    w.execute_step(2)
    assert w.sync[0].count == 0 and not w.live_threads()


def test_join_waits_for_termination():
    def child(t, g):
        t.sched_yield()

    def main(t, g):
        c = t.spawn(child)
        t.join(c)

    w = init_world(program(main))
    assert [tid for tid, _ in w.enabled_steps()] == [2]
    w.execute_step(2)
    assert [tid for tid, _ in w.enabled_steps()] == [1]


def test_cas_is_one_atomic_step():
    results = []

    def setup(b):
        return SimpleNamespace(x=b.cell("x", 5))

    def main(t, g):
        results.append(t.cas(g.x, 5, 6))
        results.append(t.cas(g.x, 5, 7))

    w = init_world(program(main, setup))
    assert w.threads[0].pending.kind is ActionKind.CAS
    w.execute_step(1)
    w.execute_step(1)
    assert results == [True, False]
    assert w.cells == [6]


def test_choose_branches_and_validation():
    seen = []

    def main(t, g):
        seen.append(t.choose(3))

    w = init_world(program(main))
    assert w.enabled_steps() == [(1, 3)]
    with pytest.raises(ControllerError):
        w.execute_step(1)
    with pytest.raises(ControllerError):
        w.execute_step(1, 3)
    w.execute_step(1, 2)
    assert seen == [2]


def test_choose_out_of_range_faults():
    w = init_world(program(lambda t, g: t.choose(17)))
    assert w.init_outcome.kind is OutcomeKind.RUNTIME_FAULT
    assert "choose(17)" in w.init_outcome.message


def test_relock_and_foreign_unlock_fault():
    def setup(b):
        return SimpleNamespace(m=b.mutex("m"))

    def relock(t, g):
        t.lock(g.m)
        t.lock(g.m)

    w = init_world(program(relock, setup))
    out = w.execute_step(1)
    assert out.kind is OutcomeKind.RUNTIME_FAULT
    assert "relock of m" in out.message
    assert w.dead

    w = init_world(program(lambda t, g: t.unlock(g.m), setup))
    assert "unlock without ownership of m" in w.init_outcome.message


def test_assertions_and_python_errors():
    w = init_world(program(lambda t, g: t.mc_assert(False, "boom")))
    assert w.init_outcome.kind is OutcomeKind.ASSERT_FAILED
    assert w.init_outcome.message == "boom"

    def plain_assert(t, g):
        assert 1 == 2, "plain"

    w = init_world(program(plain_assert))
    assert w.init_outcome.kind is OutcomeKind.ASSERT_FAILED

    w = init_world(program(lambda t, g: 1 // 0))
    assert w.init_outcome.kind is OutcomeKind.RUNTIME_FAULT
    assert w.init_outcome.message.startswith("ZeroDivisionError")


def test_swallowing_exceptions_cannot_hide_failures():
    def main(t, g):
        try:
            t.mc_assert(False, "caught?")
        except Exception:
            pass

    w = init_world(program(main))
    assert w.init_outcome.kind is OutcomeKind.ASSERT_FAILED


def test_arena_bounds_fault():
    def setup(b):
        return SimpleNamespace(a=b.arena(4))

    w = init_world(program(lambda t, g: t.read(g.a[4]), setup))
    assert w.init_outcome.kind is OutcomeKind.RUNTIME_FAULT
    w = init_world(program(lambda t, g: t.write(g.a[-1], 0), setup))
    assert w.init_outcome.kind is OutcomeKind.RUNTIME_FAULT


def test_thread_limit():
    def child(t, g):
        t.sched_yield()

    def main(t, g):
        for _ in range(MAX_THREADS):
            t.spawn(child)

    w = init_world(program(main))
    assert w.init_outcome.kind is OutcomeKind.RUNTIME_FAULT
    assert "thread limit" in w.init_outcome.message


def test_setup_errors():
    def dup(b):
        b.cell("x")
        b.cell("x")

    with pytest.raises(SetupError):
        init_world(program(lambda t, g: None, dup))
    with pytest.raises(SetupError):
        init_world(program(lambda t, g: None, lambda b: b.semaphore("s", -1)))


def test_exit_terminates_thread():
    after = []

    def main(t, g):
        t.exit()
        after.append(1)

    w = init_world(program(main))
    assert w.threads[0].pending.kind is ActionKind.EXIT
    out = w.execute_step(1)
    assert out.kind is OutcomeKind.TERMINATED and after == []


def test_controller_rejects_terminated_and_unknown_threads():
    w = init_world(program(lambda t, g: t.sched_yield()))
    with pytest.raises(ControllerError):
        w.execute_step(5)
    w.execute_step(1)
    with pytest.raises(ControllerError):
        w.execute_step(1)


def test_reset_is_bit_identical():
    from coopcheck.corpus import get_program

    for name in ("hello-shared-memory", "priority-inversion", "aba-stack"):
        p = get_program(name)
        a, b = init_world(p), reset(p)
        assert a.fingerprint() == b.fingerprint()
        assert a.prng_state == b.prng_state
        a.close()
        b.close()


def test_auto_yield_makes_accesses_scheduling_points():
    def setup(b):
        return SimpleNamespace(x=b.cell("x"))

    def main(t, g):
        t.write(g.x, t.read(g.x) + 1)

    w = init_world(program(main, setup), auto_yield=False)
    assert w.init_outcome.kind is OutcomeKind.TERMINATED
    w = init_world(program(main, setup), auto_yield=True)
    assert w.threads[0].pending.kind is ActionKind.YIELD
    w.execute_step(1)
    assert w.cells == [0]
    w.execute_step(1)
    assert w.cells == [1]


def test_fingerprint_sees_cells_sites_and_sync():
    def setup(b):
        return SimpleNamespace(x=b.cell("x"), m=b.mutex("m"))

    def main(t, g):
        t.sched_yield()
        t.sched_yield()

    w1, w2 = init_world(program(main, setup)), init_world(program(main, setup))
    assert w1.fingerprint() == w2.fingerprint()
    w1.cells[0] = 1
    assert w1.fingerprint() != w2.fingerprint()
    w1.cells[0] = 0
    w1.execute_step(1)
    assert w1.fingerprint() != w2.fingerprint()  # different pause site
