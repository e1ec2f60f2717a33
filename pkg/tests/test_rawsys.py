import random
from importlib import resources

import pytest

from acverify.mc import reachable
from acverify.rawsys import RawSystemError, encode_raw_system
from oracles import Explicit, random_system

FIG4 = (resources.files("acverify") / "data" / "fig4.its").read_text()


@pytest.fixture(scope="module")
def fig4():
    return encode_raw_system(FIG4, "fig4")


def test_fig4_shape(fig4):
    u = fig4.universe
    assert u.owner_map() == {"e": ("p", "q", "l"), "a": ("r", "t")}
    idx = reachable(fig4)
    assert len(idx) == 6
    named = {u.format_state(s) for s in idx.states}
    assert "{p, q, l, r, t}" in named and "{q, l, t}" in named
    # C and D have no successors
    assert not idx.succ[u.state(["p", "q", "t"])]
    assert not idx.succ[u.state(["p", "l", "r", "t"])]


def test_shared_label_becomes_one_action():
    src = """
    agent e: x y
    state A = {}
    state B = {x}
    state C = {y}
    state D = {x, y}
    init: A C
    trans A -> B : go @ e
    trans C -> D : go @ e
    """
    s = encode_raw_system(src)
    assert [a.id for a in s.actions] == ["go"]
    assert len(reachable(s)) == 4


def test_without_transitions_only_initial_states():
    s = encode_raw_system("agent e: x y\nstate A = {x}\ninit: A\ninit <- y & ~x\n")
    idx = reachable(s)
    assert idx.states == s.init and len(s.init) == 2


def test_action_lines():
    s = encode_raw_system("agent e: x\nagent a: y\ninit <- ~x & ~y\naction go @ a : {+y} <- ~y\n")
    (a,) = s.actions
    assert a.agent == "a" and a.effect == (("y", True),)
    assert len(reachable(s)) == 2


@pytest.mark.parametrize(
    "src",
    [
        "agent e: x\nagent e: y\n",
        "agent e: x\nstate A = {z}\n",
        "agent e: x\nstate A = {x}\ninit: B\n",
        "agent e: x\nstate A = {}\nstate B = {x}\ntrans A -> B : go @ e, a\n",
        "agent e: x\nnonsense here\n",
    ],
)
def test_errors(src):
    with pytest.raises((RawSystemError, ValueError)):
        encode_raw_system(src)


@pytest.mark.parametrize("seed", range(25))
def test_dump_round_trip(seed):
    system = random_system(random.Random(seed))
    again = encode_raw_system(system.dump())
    assert again.universe == system.universe
    assert Explicit(again).states == Explicit(system).states
    a, b = reachable(system), reachable(again)
    assert {s: sorted(t for _, t in o) for s, o in a.succ.items()} == {
        s: sorted(t for _, t in o) for s, o in b.succ.items()
    }


def test_fig4_dump_round_trip(fig4):
    again = encode_raw_system(fig4.dump(reachable(fig4).states))
    assert reachable(again).states == reachable(fig4).states
