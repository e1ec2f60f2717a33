import re
from importlib import resources

import pytest

import crs_oracle
from acverify.cegar import cegar_loop, scripted_selector
from acverify.cli import load_problem
from acverify.mc import check, reachable
from oracles import is_concrete_counterexample

DATA = resources.files("acverify") / "data"

# frozen from crs_oracle.verdicts(): query -> (holds, reachable states)
EXPECTED = {1: (True, 121), 2: (True, 2200), 3: (False, 121), 4: (True, 121)}
SELECTIONS = {2: [["a1.loc.review(p1,a2)", "a1.read.review(p1,a2)"], ["*"]], 3: [["a1.loc.cnt1(a2)", "a1.loc.reviewer(p2,a2)"], ["*"]]}


def problem(q):
    return load_problem(str(DATA / "crs.acp"), str(DATA / f"query{q}.q"))


@pytest.fixture(scope="module")
def problems():
    return {q: problem(q) for q in EXPECTED}


def test_oracle_is_frozen():
    assert crs_oracle.verdicts() == EXPECTED


@pytest.mark.parametrize("q", sorted(EXPECTED))
def test_direct_verdicts(problems, q):
    prob = problems[q]
    idx = reachable(prob.system)
    assert (check(idx, prob.prop).holds, len(idx)) == EXPECTED[q]


@pytest.mark.parametrize("q", [1, 2, 3])
def test_policy_part_matches_oracle(problems, q):
    system = problems[q].system
    u = system.universe
    env = [n for n in u.names if u.owner[n] == "e"]
    got = {frozenset(n for n in env if s & u.bit(n)) for s in reachable(system).states}
    assert got == crs_oracle.CrsModel(crs_oracle.query_inits()[q]).states


@pytest.mark.parametrize("q", sorted(EXPECTED))
def test_cegar_verdicts(problems, q):
    prob = problems[q]
    mode = "interactive" if q in SELECTIONS else "automatic"
    sel = scripted_selector(SELECTIONS[q]) if q in SELECTIONS else None
    res = cegar_loop(prob.system, prob.prop, prob.init, mode=mode, prop_selector=sel, extra_visible=prob.visible)
    assert res.holds == EXPECTED[q][0]
    if q != 2:
        assert res.max_abstract_states < EXPECTED[q][1]
        assert res.confirmed
    if not res.holds:
        assert is_concrete_counterexample(res.counterexample, prob.system)


def _base(action_id):
    return re.sub(r"\.\d+$", "", action_id)


def test_query3_counterexample_replays_the_leak(problems):
    prob = problems[3]
    res = cegar_loop(
        prob.system, prob.prop, prob.init, mode="interactive", prop_selector=scripted_selector(SELECTIONS[3])
    )
    tree = res.counterexample
    steps = [_base(e.label) for e in tree.edges() if e.kind == "temporal"]
    assert steps == ["assignFirst(a3,a1,p2)", "assignFirst(a3,a2,p1)"]
    model = crs_oracle.CrsModel(crs_oracle.query_inits()[3])
    s = model.init
    for a in steps:
        s = dict(model.succ[s])[a]
    assert {"assigned(p1)", "assigned(p2)", "reviewer(p1,a2)"} <= s
    # a1 cannot read reviewer(p1,a2) but still knows it from the counters
    assert not crs_oracle.readable("a1", "reviewer(p1,a2)", s)
    assert model.knows("a1", s, "reviewer(p1,a2)")
