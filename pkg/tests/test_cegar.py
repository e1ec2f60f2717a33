import random
from importlib import resources

import pytest

from acverify.abstraction import AbstractionMap, abstract_is
from acverify.boolean import clause_formula
from acverify.cegar import (
    CegarError,
    SelectionAborted,
    check_ce,
    cegar_loop,
    find_failure,
    negated_k_agents,
    refine,
    scripted_selector,
    static_props,
    tree_paths,
)
from acverify.mc import CounterexampleTree, UnsupportedFormula, check, counterexample
from acverify.rawsys import encode_raw_system
from acverify.syntax import parse_formula as P
from oracles import concrete_tree_exists, is_concrete_counterexample, random_instance

FIG4 = encode_raw_system((resources.files("acverify") / "data" / "fig4.its").read_text(), "fig4")
FIG4_PROP = P("AG(p -> K_a p | AG q)")


def st(u, *names):
    return u.state(names)


# ---------------------------------------------------------------- six-state model


@pytest.fixture(scope="module")
def fig4_abs():
    u = FIG4.universe
    return abstract_is(FIG4, AbstractionMap(u, frozenset({"p", "q", "t"})))


@pytest.fixture(scope="module")
def fig4_ce(fig4_abs):
    return counterexample(fig4_abs.system, FIG4_PROP)


def test_fig4_abstract_tree(fig4_abs, fig4_ce):
    u = FIG4.universe
    assert not check(fig4_abs.system, FIG4_PROP).holds
    assert fig4_ce.root.state == st(u, "q")
    edges = [(e.kind, e.label, e.source.state, e.target.state) for e in fig4_ce.edges()]
    assert edges == [
        ("temporal", "alpha11+1", st(u, "q"), st(u, "p", "q", "t")),
        ("epistemic", "a", st(u, "p", "q", "t"), st(u, "q", "t")),
        ("temporal", "alpha2", st(u, "p", "q", "t"), st(u, "p", "t")),
    ]
    assert len(tree_paths(fig4_ce)) == 2


def test_fig4_check_ce(fig4_abs, fig4_ce):
    res = check_ce(fig4_ce, FIG4, fig4_abs)
    assert not res.valid
    assert res.stage == "intersection"
    assert fig4_ce.nodes[res.node].state == st(FIG4.universe, "p", "q", "t")
    assert not concrete_tree_exists(fig4_ce, FIG4, fig4_abs)


def test_fig4_failure(fig4_abs, fig4_ce):
    u = FIG4.universe
    d = find_failure(fig4_ce, FIG4, fig4_abs)
    assert d.kind == "E3"
    assert d.state == st(u, "p", "q", "t")
    assert d.dead_end == {st(u, "p", "q", "l", "r", "t")}  # B
    assert d.bad == {st(u, "p", "q", "t")}  # D
    assert [str(clause_formula(c)) for c in d.clauses] == ["~r"]
    assert refine(fig4_abs.amap, d).visible == {"p", "q", "t", "r"}
    assert "no shared local state" in d.describe(u, fig4_abs.amap.visible)


def test_fig4_loop():
    res = cegar_loop(FIG4, FIG4_PROP, extra_visible=["t"])
    assert res.holds and res.confirmed
    assert [(t.visible, t.abstract_states, t.verdict, t.ce_status) for t in res.trace] == [
        (3, 5, "fails", "spurious"),
        (4, 6, "holds", ""),
    ]
    assert res.trace[0].added == ["r"]


# ---------------------------------------------------------------- later sweeps

SWEEP = """
agent e: v w u h1 h2
state x = {}
state x2 = {h1}
state n1 = {v}
state n2 = {v, h2}
state n3 = {v, h1}
state b1 = {v, w}
state b3 = {v, w, h1}
state g2 = {v, u, h2}
state g3 = {v, u, h1}
state d = {w}
init: x x2
trans x -> n1 : alpha1 @ e
trans x -> n2 : alpha2 @ e
trans x2 -> n3 : alpha3 @ e
trans n1 -> b1 : beta1 @ e
trans n3 -> b3 : beta3 @ e
trans n2 -> g2 : gamma2 @ e
trans n3 -> g3 : gamma3 @ e
trans x -> d : delta @ e
"""


@pytest.fixture(scope="module")
def sweep():
    I = encode_raw_system(SWEEP, "sweep")
    u = I.universe
    ab = abstract_is(I, AbstractionMap(u, frozenset({"v", "w", "u"})))
    ce = CounterexampleTree(0)
    n = ce.add_edge("temporal", "alpha1+2", ce.root, st(u, "v"))
    ce.add_edge("temporal", "beta1+1", n, st(u, "v", "w"))
    ce.add_edge("temporal", "gamma2+1", n, st(u, "v", "u"))
    ce.add_edge("temporal", "delta", ce.root, st(u, "w"))
    return I, ab, ce


def test_sweep_catches_what_one_pass_misses(sweep):
    # every node keeps a candidate after one pass, yet the only root with a
    # delta step (x) has no successor offering both beta and gamma
    I, ab, ce = sweep
    u = I.universe
    res = check_ce(ce, I, ab)
    assert not res.valid and res.stage == "sweep"
    assert not concrete_tree_exists(ce, I, ab)
    assert res.R[0] == {st(u)}
    assert res.R[1] == {st(u, "v", "h1")}


def test_sweep_failure_partition(sweep):
    I, ab, ce = sweep
    u = I.universe
    d = find_failure(ce, I, ab)
    assert (d.kind, d.node, d.path) == ("T1", 0, 2)
    assert d.dead_end == {st(u, "h1")}
    assert d.bad == {st(u)}
    assert d.props == {"h1"}


def test_sweep_loop():
    I = encode_raw_system(SWEEP, "sweep")
    f = P("AX(AX ~w | AX ~u) | AX ~w")
    assert check(I, f).holds
    res = cegar_loop(I, f, extra_visible=["v"])
    assert res.holds and res.confirmed
    assert res.refinements >= 1


# ---------------------------------------------------------------- epistemic witnesses

WITNESS = """
agent e: t h
agent a: y
state A = {}
state B = {h}
state T = {t, h}
state T2 = {t}
init: A
trans A -> B : go1 @ e
trans B -> T : go2 @ e
trans A -> T2 : go3 @ a
"""


def test_spurious_witness_path():
    I = encode_raw_system(WITNESS)
    ab = abstract_is(I, AbstractionMap(I.universe, frozenset({"t"})))
    f = P("K_a ~t")
    ce = counterexample(ab.system, f)
    (edge,) = list(ce.edges())
    assert [l for l, _ in edge.witness] == [None, "go2"]
    single = check_ce(ce, I, ab)
    assert not single.valid and single.stage == "forward"
    assert check_ce(ce, I, ab, all_witnesses=True).valid
    d = find_failure(ce, I, ab)
    assert d.kind == "E1" and d.witness.kind == "T1" and d.props == {"h"}


@pytest.mark.parametrize("all_witnesses, rounds", [(False, 2), (True, 1)])
def test_witness_modes_in_loop(all_witnesses, rounds):
    I = encode_raw_system(WITNESS)
    res = cegar_loop(I, P("K_a ~t"), all_witnesses=all_witnesses)
    assert not res.holds and res.iterations == rounds
    assert is_concrete_counterexample(res.counterexample, I)


# ---------------------------------------------------------------- linear counterexamples

LINEAR = """
agent e: x y g h
init <- ~x & ~y & ~g & ~h
action sethidden @ e : {+h} <- ~h & ~x
action step1 @ e : {+x} <- ~x & ~h
action step2 @ e : {+y} <- x & ~y
action goal @ e : {+g} <- y & h
"""


def test_linear_counterexample_is_refined():
    I = encode_raw_system(LINEAR)
    f = P("AG ~g")
    assert check(I, f).holds
    res = cegar_loop(I, f)
    assert res.holds and res.confirmed
    first = res.trace[0]
    assert first.ce_status == "spurious" and first.failure_kind in ("T1", "T2")
    assert "h" in first.added


def test_valid_counterexample_is_concrete():
    I = encode_raw_system(LINEAR.replace("goal @ e : {+g} <- y & h", "goal @ e : {+g} <- y"))
    res = cegar_loop(I, P("AG ~g"))
    assert not res.holds
    assert is_concrete_counterexample(res.counterexample, I)
    assert res.abstract_counterexample is not None


# ---------------------------------------------------------------- refinement and modes


def test_refine_always_grows(fig4_abs, fig4_ce):
    d = find_failure(fig4_ce, FIG4, fig4_abs)
    d.props = frozenset()
    d.conflicts = []
    grown = refine(fig4_abs.amap, d)
    assert grown.visible > fig4_abs.amap.visible
    with pytest.raises(CegarError):
        refine(fig4_abs.amap.refine(fig4_abs.amap.hidden), d)


def test_automatic_mode_rejects_negated_knowledge():
    with pytest.raises(UnsupportedFormula):
        cegar_loop(FIG4, P("AG ~K_a p"))


def test_interactive_mode_needs_selections():
    f = P("AG(p -> ~K_a q)")
    assert negated_k_agents(f) == ["a"]
    with pytest.raises(SelectionAborted):
        cegar_loop(FIG4, f, mode="interactive", prop_selector=scripted_selector([]))


def test_interactive_mode_reveals_local_props():
    f = P("AG(p -> ~K_a q)")
    res = cegar_loop(FIG4, f, mode="interactive", prop_selector=scripted_selector([["*"]] * 5))
    assert not check(FIG4, f).holds
    assert not res.holds and res.confirmed
    assert [t.selected for t in res.trace] == [["r", "t"], []]
    assert is_concrete_counterexample(res.counterexample, FIG4)


def test_interactive_without_candidates_is_unconfirmed():
    # every local proposition of a is already visible
    f = P("AG(t & ~l -> ~K_a p)")
    res = cegar_loop(FIG4, f, mode="interactive", extra_visible=["r"], prop_selector=scripted_selector([]))
    assert check(FIG4, f).holds
    assert res.holds and not res.confirmed and res.iterations == 1


def test_static_props():
    assert static_props(FIG4) == frozenset()
    I = encode_raw_system(LINEAR)
    assert static_props(I) == frozenset()


# ---------------------------------------------------------------- random corpus


def _spurious_cases(count, seed):
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        system, visible, f = random_instance(rng)
        ab = abstract_is(system, AbstractionMap(system.universe, visible))
        ce = counterexample(ab.system, f)
        if ce is not None and not check_ce(ce, system, ab).valid:
            out.append((system, ab, ce))
    return out


@pytest.mark.parametrize("seed", range(120))
def test_check_ce_matches_oracle(seed):
    rng = random.Random(seed)
    system, visible, f = random_instance(rng)
    ab = abstract_is(system, AbstractionMap(system.universe, visible))
    ce = counterexample(ab.system, f)
    if ce is None:
        return
    for aw in (False, True):
        res = check_ce(ce, system, ab, all_witnesses=aw)
        assert res.valid == concrete_tree_exists(ce, system, ab, aw)
        if res.valid:
            assert is_concrete_counterexample(res.concrete, system)


def test_failure_partition_on_random_spurious_trees():
    for system, ab, ce in _spurious_cases(40, 11):
        d = find_failure(ce, system, ab)
        pre = {s for s in d.dead_end | (d.bad or set()) if s & ab.amap.mask != d.state}
        assert not pre
        assert d.dead_end and not (d.dead_end & (d.bad or set()))
        assert refine(ab.amap, d).visible > ab.amap.visible


@pytest.mark.parametrize("seed", range(80))
def test_loop_matches_concrete_verdict(seed):
    rng = random.Random(seed)
    system, visible, f = random_instance(rng)
    res = cegar_loop(system, f, extra_visible=visible)
    assert res.holds == check(system, f).holds
    assert res.confirmed
    assert res.refinements <= len(AbstractionMap(system.universe, visible).hidden)
