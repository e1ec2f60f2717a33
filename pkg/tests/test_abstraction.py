import random

import pytest

from acverify.abstraction import (
    AbstractionMap,
    abstract_guard,
    abstract_is,
    classify_actions,
    initial_abstraction,
    simulation_check,
)
from acverify.formula import atoms
from acverify.kernel import InterpretedSystem, Universe
from acverify.mc import check, reachable
from acverify.policy import GroundAction
from acverify.syntax import parse_formula as P
from oracles import random_instance, random_system, random_visible


def test_map_basics():
    u = Universe({"e": ["x", "y"], "a": ["z"]})
    m = AbstractionMap(u, frozenset({"x", "z"}))
    assert m.hidden == {"y"}
    assert m.h(0b111) == 0b101
    assert m.h_local("a", 0b111) == 0b100
    assert m.preimage(0b001, range(8)) == {0b001, 0b011}
    assert m.refine(["y"]).is_identity()
    with pytest.raises(ValueError):
        AbstractionMap(u, frozenset({"nope"}))


def test_initial_abstraction_uses_property_and_init():
    u = Universe({"e": ["x", "y", "w"]})
    s = InterpretedSystem(u, [], [0])
    m = initial_abstraction(s, P("AG x"), P("~y"), ["w"])
    assert m.visible == {"x", "y", "w"}


def test_abstract_guard_quantifies_hidden():
    g = abstract_guard(P("x & (h | ~y)"), frozenset({"x", "y"}))
    assert atoms(g) == {"x"}


def test_class_naming():
    acts = [
        GroundAction("b1", "e", (("v", True), ("h", True)), P("~v")),
        GroundAction("b2", "e", (("v", True), ("h", False)), P("~v & h")),
        GroundAction("c", "e", (("v", True),), P("v")),
        GroundAction("d", "a", (("v", True),), P("~v")),
    ]
    classes, h_a = classify_actions(acts, {"v"})
    assert [(c.id, c.members) for c in classes] == [("b1+1", ("b1", "b2")), ("c", ("c",)), ("d", ("d",))]
    assert h_a == {"b1": "b1+1", "b2": "b1+1", "c": "c", "d": "d"}


@pytest.mark.parametrize("seed", range(60))
def test_simulation_on_random_systems(seed):
    rng = random.Random(seed)
    system = random_system(rng)
    amap = AbstractionMap(system.universe, random_visible(rng, system.universe))
    ab = abstract_is(system, amap)
    assert simulation_check(system, ab.system, amap, ab.h_a)


def test_simulation_detects_a_broken_abstract_model():
    u = Universe({"e": ["x", "h"]})
    act = GroundAction("go", "e", (("x", True),), P("~x"))
    concrete = InterpretedSystem(u, [act], [0])
    amap = AbstractionMap(u, frozenset({"x"}))
    empty = InterpretedSystem(u, [], [0])
    res = simulation_check(concrete, empty, amap)
    assert not res and res.clause == 2
    wrong_label = simulation_check(concrete, abstract_is(concrete, amap).system, amap, {"go": "other"})
    assert not wrong_label and wrong_label.clause == 3


@pytest.mark.parametrize("seed", range(200))
def test_abstract_verdict_carries_over(seed):
    rng = random.Random(seed)
    system, visible, f = random_instance(rng)
    ab = abstract_is(system, AbstractionMap(system.universe, visible))
    if check(ab.system, f).holds:
        assert check(system, f).holds


def test_abstract_is_smaller():
    rng = random.Random(7)
    system = random_system(rng, env_props=(3, 3), agent_props=(2, 2))
    amap = AbstractionMap(system.universe, frozenset(list(system.universe.names)[:3]))
    ab = abstract_is(system, amap)
    assert len(reachable(ab.system)) <= 8
    text = ab.report(len(reachable(system)), len(reachable(ab.system)))
    assert "visible propositions: 3" in text
