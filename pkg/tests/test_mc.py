import random
from importlib import resources

import pytest

from acverify.formula import Atom, K, Not, Temporal
from acverify.mc import (
    FormulaError,
    ModelChecker,
    UnsupportedFormula,
    actlk_nnf,
    check,
    counterexample,
    is_actlk,
    reachable,
)
from acverify.rawsys import encode_raw_system
from acverify.syntax import parse_formula as P
from oracles import (
    Explicit,
    Semantics,
    is_concrete_counterexample,
    random_actlk_safety,
    random_ctlk,
    random_system,
)

FIG4 = encode_raw_system((resources.files("acverify") / "data" / "fig4.its").read_text(), "fig4")
U = FIG4.universe
NAMED = {
    "A": U.state(["q", "l", "r"]),
    "B": U.state(["p", "q", "l", "r", "t"]),
    "C": U.state(["p", "l", "r", "t"]),
    "D": U.state(["p", "q", "t"]),
    "E": U.state(["l"]),
    "F": U.state(["q", "l", "t"]),
}


def names(states):
    inv = {v: k for k, v in NAMED.items()}
    return "".join(sorted(inv[s] for s in states))


# values worked out by hand on the six-state model
@pytest.mark.parametrize(
    "text, expected",
    [
        ("p", "BCD"),
        ("EX p", "AB"),
        ("AX p", "ABCDF"),  # C, D and F are deadlocks, AX holds vacuously
        ("EG true", ""),
        ("EF ~q", "ABCE"),
        ("AG q", "DF"),
        ("K_a p", "BC"),
        ("K_a q", "ADF"),
        ("E(q U p)", "ABCD"),
        ("A(l U ~q)", "BCEF"),  # vacuous at the deadlock F: no infinite path
        ("E(p R q)", "ABD"),
        ("A(false R ~t)", ""),
    ],
)
def test_fig4_sat_sets(text, expected):
    idx = reachable(FIG4)
    assert names(ModelChecker(idx).sat(P(text))) == expected


def test_fig4_property_holds_concretely():
    assert check(FIG4, P("AG(p -> K_a p | AG q)")).holds


@pytest.mark.parametrize("seed", range(300))
def test_agrees_with_recursive_semantics(seed):
    rng = random.Random(seed)
    system = random_system(rng, max_bits=4)
    ex = Explicit(system)
    sem = Semantics(ex)
    f = random_ctlk(rng, list(system.universe.names), list(system.universe.agents), rng.randint(1, 4))
    assert ModelChecker(reachable(system)).sat(f) == sem.sat_set(f)


@pytest.mark.parametrize("seed", range(150))
def test_counterexamples_are_concrete(seed):
    rng = random.Random(seed)
    system = random_system(rng)
    agents = [a for a in system.universe.agents if a != "e"]
    f = random_actlk_safety(rng, list(system.universe.names), agents, rng.randint(1, 3))
    res = check(system, f)
    tree = counterexample(system, f)
    assert (tree is None) == res.holds
    if tree is not None:
        assert is_concrete_counterexample(tree, system)
        assert tree.root.state in res.failing_init
        sem = Semantics(Explicit(system))
        for n in tree.nodes:
            for g in n.violates:
                assert not sem.sat(g, n.state)


def test_classification():
    assert is_actlk(P("AG(p -> K_a q)"), safety=True)
    assert not is_actlk(P("EF p"), safety=True)
    assert not is_actlk(P("AG ~K_a p"), safety=True)
    assert is_actlk(P("AG ~K_a p"), safety=True, allow_neg_k=True)
    assert not is_actlk(P("AF p"), safety=True)
    assert actlk_nnf(P("~(p & q)")) == P("~p | ~q")


def test_unsupported_counterexample():
    with pytest.raises(UnsupportedFormula):
        counterexample(FIG4, P("EF p"))


def test_unknown_names():
    with pytest.raises(FormulaError):
        check(FIG4, Atom("zz"))
    with pytest.raises(FormulaError):
        check(FIG4, K("nobody", Atom("p")))


def test_negated_knowledge_leaf():
    # the tree generator accepts ~K leaves; its verdict matches the checker
    f = Temporal("AG", Not(K("a", Not(Atom("q")))))
    tree = counterexample(FIG4, f)
    res = check(FIG4, f)
    assert (tree is None) == res.holds
