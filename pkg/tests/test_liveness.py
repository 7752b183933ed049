from collections import deque
from types import SimpleNamespace

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import program
from coopcheck.explorer import ExploreConfig, children
from coopcheck.liveness import (
    FALSE,
    TRUE,
    AutomatonSyntaxError,
    BuchiAutomaton,
    Edge,
    LivenessSetupError,
    build_response_negation,
    g_and,
    g_not,
    g_or,
    liveness_explore,
    parse_automaton,
    parse_guard,
    parse_property,
    render_automaton,
    sym,
)
from coopcheck.model import VerdictKind
from coopcheck.runtime import init_world

# -- guards and the automaton format ---------------------------------------

names = st.sampled_from(["p", "q", "r.x"])
guards = st.recursive(
    st.one_of(st.just(TRUE), st.just(FALSE), names.map(sym)),
    lambda sub: st.one_of(
        sub.map(g_not), st.tuples(sub, sub).map(lambda t: g_and(*t)), st.tuples(sub, sub).map(lambda t: g_or(*t))
    ),
    max_leaves=8,
)
valuations = st.fixed_dictionaries({"p": st.booleans(), "q": st.booleans(), "r.x": st.booleans()})


@settings(max_examples=200)
@given(guards, valuations)
def test_guard_render_parse_preserves_meaning(g, val):
    assert parse_guard(str(g)).eval(val) == g.eval(val)
    assert parse_guard(g.render()) == g


@pytest.mark.parametrize(
    "text, val, expected",
    [
        ("p & !q", {"p": True, "q": False}, True),
        ("p && q || !p", {"p": False, "q": False}, True),
        ("¬p ∨ (p ∧ q)", {"p": True, "q": False}, False),
        ("!(p | q)", {"p": False, "q": False}, True),
        ("true & !false", {}, True),
    ],
)
def test_guard_examples(text, val, expected):
    assert parse_guard(text).eval(val) is expected


@pytest.mark.parametrize("text", ["p &", "(p", "p q", "p $ q", ""])
def test_guard_syntax_errors(text):
    with pytest.raises(AutomatonSyntaxError):
        parse_guard(text)


def test_response_negation_shape():
    a = build_response_negation("r", "cs")
    assert a.initial == "q0" and set(a.accepting) == {"q1"}
    assert a.successors("q0", {"r": True, "cs": False}) == ["q0", "q1"]
    assert a.successors("q0", {"r": True, "cs": True}) == ["q0"]
    assert a.successors("q1", {"r": False, "cs": False}) == ["q1"]
    assert a.successors("q1", {"r": True, "cs": True}) == []
    assert a.symbols() == {"r", "cs"}


def test_automaton_text_round_trip():
    a = build_response_negation("r", "cs")
    text = render_automaton(a)
    b = parse_automaton(text)
    assert render_automaton(b) == text
    for val in ({"r": x, "cs": y} for x in (0, 1) for y in (0, 1)):
        val = {k: bool(v) for k, v in val.items()}
        for q in a.states:
            assert a.successors(q, val) == b.successors(q, val)


def test_automaton_file_with_comments(tmp_path):
    f = tmp_path / "prop.ba"
    f.write_text(
        "# never q after p\n"
        "state s0 initial\n"
        "state s1 accepting\n"
        "edge s0 s0 true\n"
        "edge s0 s1 p   # p seen\n"
        "edge s1 s1 !q\n"
    )
    a = parse_property(f"file:{f}")
    assert a.initial == "s0" and "s1" in a.accepting


@pytest.mark.parametrize(
    "text, line",
    [
        ("state a initial\nstate a accepting\n", 2),
        ("state a initial accepting\nedge a b true\n", 2),
        ("state a initial accepting\nwibble\n", 2),
        ("state a initial accepting sticky\n", 1),
        ("state a initial accepting\nedge a a p &\n", 2),
    ],
)
def test_automaton_syntax_errors(text, line):
    with pytest.raises(AutomatonSyntaxError) as exc:
        parse_automaton(text)
    assert exc.value.line == line


@pytest.mark.parametrize("text", ["state a\n", "state a initial\n"])
def test_automaton_needs_initial_and_accepting(text):
    with pytest.raises(AutomatonSyntaxError):
        parse_automaton(text)


def test_property_spec_errors():
    for bad in ("response:p", "response:,q", "ltl:G p", "file:"):
        with pytest.raises(ValueError):
            parse_property(bad)


def test_unregistered_symbol_is_setup_error():
    with pytest.raises(LivenessSetupError):
        liveness_explore(program(lambda t, g: None), build_response_negation("p", "q"))


# -- micro-programs and the explicit product-graph oracle --------------------


def _pq_setup(b):
    g = SimpleNamespace(p=b.cell("p"), q=b.cell("q"), n=b.cell("n"))
    b.symbol("p", g.p)
    b.symbol("q", g.q)
    return g


def _spin_forever(t, g):
    while True:
        t.sched_yield()


def never_granted(t, g):
    """p is raised and q never follows: violation."""
    t.write(g.p, 1)
    _spin_forever(t, g)


def granted_single(t, g):
    """One thread raises p and then q for good: no violation."""
    t.write(g.p, 1)
    t.sched_yield()
    t.write(g.q, 1)
    _spin_forever(t, g)


def _grant_worker(t, g):
    t.sched_yield()
    t.write(g.q, 1)


def unfair_grant(t, g):
    """The granting worker can be starved forever by the spinning main."""
    t.spawn(_grant_worker)
    t.write(g.p, 1)
    _spin_forever(t, g)


def terminating(t, g):
    """Every execution is finite: no violation."""
    t.write(g.p, 1)
    t.sched_yield()
    t.sched_yield()


def choosy(t, g):
    """Each round picks whether to grant; always refusing is a violation."""
    while True:
        t.write(g.p, 1)
        c = t.choose(2)
        t.write(g.q, c)
        t.write(g.n, (t.read(g.n) + 1) % 3)


def toggler(t, g):
    """q holds at every other state; a request is always answered."""
    while True:
        t.write(g.p, 1)
        t.write(g.q, 0)
        t.sched_yield()
        t.write(g.q, 1)
        t.sched_yield()


def _locker(t, g):
    while True:
        t.lock(g.m)
        t.write(g.q, 1)
        t.unlock(g.m)
        t.write(g.q, 0)


def lock_pair(t, g):
    """Two lockers; q pulses only while someone holds the lock."""
    t.spawn(_locker)
    t.write(g.p, 1)
    _locker(t, g)


def _lock_setup(b):
    g = _pq_setup(b)
    g.m = b.mutex("m")
    return g


MICRO = {
    "never_granted": program(never_granted, _pq_setup),
    "granted_single": program(granted_single, _pq_setup),
    "unfair_grant": program(unfair_grant, _pq_setup),
    "terminating": program(terminating, _pq_setup),
    "choosy": program(choosy, _pq_setup),
    "toggler": program(toggler, _pq_setup),
    "lock_pair": program(lock_pair, _lock_setup),
}


def _world_at(prog, path):
    w = init_world(prog)
    for s in path:
        w.execute_step(s.tid, s.choice)
    return w


def product_graph(prog, a: BuchiAutomaton):
    """Build the reachable product graph explicitly by breadth-first search."""
    g = nx.DiGraph()
    w0 = _world_at(prog, ())
    fp0, val0 = w0.fingerprint(), w0.valuation()
    w0.close()
    todo = deque()
    for q in a.successors(a.initial, val0):
        g.add_node((fp0, q))
        todo.append(((fp0, q), ()))
    done = set()
    while todo:
        node, path = todo.popleft()
        if node in done:
            continue
        done.add(node)
        w = _world_at(prog, path)
        kids = [] if w.dead else children(w)
        w.close()
        for step in kids:
            w2 = _world_at(prog, path + (step,))
            if not w2.dead:
                fp2, val2 = w2.fingerprint(), w2.valuation()
                for q2 in a.successors(node[1], val2):
                    g.add_edge(node, (fp2, q2))
                    if (fp2, q2) not in done:
                        todo.append(((fp2, q2), path + (step,)))
            w2.close()
    return g


def oracle_violation(g: nx.DiGraph, a: BuchiAutomaton) -> bool:
    for comp in nx.strongly_connected_components(g):
        nontrivial = len(comp) > 1 or any(g.has_edge(n, n) for n in comp)
        if nontrivial and any(q in a.accepting for _, q in comp):
            return True
    return False


@pytest.mark.parametrize("name", sorted(MICRO))
def test_nested_dfs_matches_scc_oracle(name):
    prog = MICRO[name]
    a = build_response_negation("p", "q")
    g = product_graph(prog, a)
    assert g.number_of_nodes() <= 200
    expected = oracle_violation(g, a)
    rep = liveness_explore(prog, a, ExploreConfig(max_depth=200))
    assert (rep.kind is VerdictKind.LIVENESS_VIOLATION) == expected
    if expected:
        lasso = rep.verdict.lasso
        assert lasso.prefix_states[-1] in a.accepting
        w1 = _world_at(prog, lasso.prefix)
        w2 = _world_at(prog, lasso.prefix + lasso.cycle)
        assert w1.fingerprint() == w2.fingerprint()


def test_oracle_sees_both_verdicts():
    a = build_response_negation("p", "q")
    results = {n: oracle_violation(product_graph(p, a), a) for n, p in MICRO.items()}
    assert results["never_granted"] and results["unfair_grant"] and results["choosy"]
    assert not results["granted_single"] and not results["terminating"]


def test_lasso_cycle_keeps_q_false():
    a = build_response_negation("p", "q")
    rep = liveness_explore(MICRO["choosy"], a, ExploreConfig(max_depth=50))
    lasso = rep.verdict.lasso
    for k in range(1, len(lasso.cycle) + 1):
        w = _world_at(MICRO["choosy"], lasso.prefix + lasso.cycle[:k])
        assert not w.symbol_value("q")
        w.close()
