"""Variable-hiding abstraction of interpreted systems.

An abstract state is the concrete bitvector with the hidden bits cleared, so
abstract and concrete systems share one :class:`~acverify.kernel.Universe`
and bit positions.  Concrete actions are grouped into abstract actions by
agent, visible effect and the meaning of their existentially quantified
guard.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from acverify.boolean import canonical_function, exists_quantify, simplify
from acverify.formula import Formula, atoms
from acverify.kernel import Action, InterpretedSystem, Universe
from acverify.mc import ReachabilityIndex, reachable
from acverify.policy import GroundAction

GUARD_TABLE_LIMIT = 20


@dataclass(frozen=True)
class AbstractionMap:
    """Visible propositions of a universe and the induced maps ``h`` and ``h_i``."""

    universe: Universe
    visible: frozenset

    def __post_init__(self):
        unknown = [n for n in self.visible if n not in self.universe.index]
        if unknown:
            raise ValueError(f"unknown propositions {sorted(unknown)[:3]}")

    @property
    def mask(self) -> int:
        return self.universe.mask_of(self.visible)

    @property
    def hidden(self) -> frozenset:
        return frozenset(self.universe.names) - self.visible

    def h(self, s: int) -> int:
        return s & self.mask

    def h_local(self, agent: str, s: int) -> int:
        return s & self.mask & self.universe.masks[agent]

    def image(self, states: Iterable[int]) -> set[int]:
        m = self.mask
        return {s & m for s in states}

    def preimage(self, abstract_state: int, states: Iterable[int]) -> set[int]:
        """Members of ``states`` mapped to ``abstract_state``."""
        m = self.mask
        return {s for s in states if s & m == abstract_state}

    def refine(self, extra: Iterable[str]) -> "AbstractionMap":
        return AbstractionMap(self.universe, self.visible | frozenset(extra))

    def is_identity(self) -> bool:
        return not self.hidden

    def visible_names(self) -> list[str]:
        return [n for n in self.universe.names if n in self.visible]


def initial_abstraction(
    system: InterpretedSystem, prop: Formula, init: Formula | None = None, extra: Iterable[str] = ()
) -> AbstractionMap:
    """Visible set = atoms of the property, of the initial condition and ``extra``."""
    vis = set(atoms(prop))
    if init is not None:
        vis |= atoms(init)
    vis |= set(extra)
    return AbstractionMap(system.universe, frozenset(vis))


@dataclass(frozen=True)
class AbstractAction(GroundAction):
    members: tuple = field(default=(), compare=False)


_EXISTS_CACHE: dict[tuple[Formula, frozenset], Formula] = {}


def abstract_guard(guard: Formula, visible: frozenset) -> Formula:
    hidden = frozenset(atoms(guard) - visible)
    if not hidden:
        return simplify(guard)
    key = (guard, hidden)
    hit = _EXISTS_CACHE.get(key)
    if hit is None:
        if len(_EXISTS_CACHE) > 200_000:
            _EXISTS_CACHE.clear()
        hit = _EXISTS_CACHE[key] = exists_quantify(guard, hidden)
    return hit


def classify_actions(
    actions: Iterable[Action], visible: Iterable[str], table_limit: int = GUARD_TABLE_LIMIT
) -> tuple[list[AbstractAction], dict[str, str]]:
    """Partition actions into abstract classes; returns the classes and ``h_A``.

    Two actions share a class when they have the same agent, the same effect
    on visible propositions and equivalent abstract guards (compared by
    truth table over the guard's support, at most ``table_limit`` variables).
    A class is named after its first member; classes of several actions get a
    ``+n`` suffix giving the number of further members.
    """
    visible = frozenset(visible)
    groups: dict[tuple, list[tuple[Action, Formula]]] = {}
    for a in actions:
        eff = tuple(l for l in a.effect if l[0] in visible)
        g = abstract_guard(a.guard, visible)
        key = (a.agent, eff, canonical_function(g, table_limit))
        groups.setdefault(key, []).append((a, g))
    classes: list[AbstractAction] = []
    h_a: dict[str, str] = {}
    for (agent, eff, _), members in groups.items():
        first, guard = members[0]
        cid = first.id if len(members) == 1 else f"{first.id}+{len(members) - 1}"
        ids = tuple(m.id for m, _ in members)
        classes.append(AbstractAction(cid, agent, eff, guard, ids))
        for i in ids:
            h_a[i] = cid
    return classes, h_a


@dataclass
class Abstraction:
    """An abstract system together with the maps relating it to the concrete one."""

    concrete: InterpretedSystem
    amap: AbstractionMap
    system: InterpretedSystem
    classes: list[AbstractAction]
    h_a: dict[str, str]

    @property
    def members(self) -> dict[str, tuple[str, ...]]:
        return {c.id: c.members for c in self.classes}

    def report(self, concrete_states: int | None = None, abstract_states: int | None = None) -> str:
        lines = [
            f"visible propositions: {len(self.amap.visible)} of {len(self.amap.universe)}",
            f"  {', '.join(self.amap.visible_names())}",
            f"concrete actions: {len(self.concrete.actions)}; abstract classes: {len(self.classes)}",
        ]
        if concrete_states is not None:
            lines.append(f"concrete reachable states: {concrete_states}")
        if abstract_states is not None:
            lines.append(f"abstract reachable states: {abstract_states}")
        return "\n".join(lines) + "\n"


def abstract_is(system: InterpretedSystem, amap: AbstractionMap) -> Abstraction:
    classes, h_a = classify_actions(system.actions, amap.visible)
    abstract = InterpretedSystem(
        system.universe, classes, amap.image(system.init), name=f"{system.name}/abstract"
    )
    return Abstraction(system, amap, abstract, classes, h_a)


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class SimulationResult:
    ok: bool
    clause: int = 0  # 1 initial, 2 labelling, 3 temporal, 4 epistemic
    witness: tuple = ()
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def simulation_check(
    concrete: InterpretedSystem | ReachabilityIndex,
    abstract: InterpretedSystem | ReachabilityIndex,
    amap: AbstractionMap,
    h_a: Mapping[str, str] | None = None,
) -> SimulationResult:
    """Check that the graph of ``h`` over reachable states is a simulation.

    Clauses: (1) initial states map to abstract initial states; (2) related
    states agree on visible propositions; (3) every concrete transition
    ``s -a-> t`` has an abstract transition ``h(s) -h_A(a)-> h(t)`` (any label
    when ``h_a`` is omitted); (4) concretely indistinguishable reachable states
    map to abstractly indistinguishable reachable states.
    """
    ci = concrete if isinstance(concrete, ReachabilityIndex) else reachable(concrete)
    ai = abstract if isinstance(abstract, ReachabilityIndex) else reachable(abstract)
    cu, au = ci.universe, ai.universe
    for s in sorted(ci.init):
        if amap.h(s) not in ai.init:
            return SimulationResult(False, 1, (s,), "initial state has no abstract initial image")
    vis = amap.visible_names()
    for s in sorted(ci.states):
        hs = amap.h(s)
        if hs not in ai.states:
            return SimulationResult(False, 2, (s,), "reachable state maps outside the abstract reachable set")
        for n in vis:
            if bool(s >> cu.index[n] & 1) != bool(hs >> au.index[n] & 1):
                return SimulationResult(False, 2, (s, hs), f"disagreement on {n}")
    for s in sorted(ci.states):
        hs = amap.h(s)
        abs_out = ai.succ.get(hs, [])
        for aid, t in ci.succ[s]:
            ht = amap.h(t)
            want = None if h_a is None else h_a.get(aid)
            if not any(bt == ht and (want is None or bid == want) for bid, bt in abs_out):
                return SimulationResult(False, 3, (s, aid, t), "concrete transition not matched")
    for agent in cu.agents:
        for block in ci.blocks(agent).values():
            images = {amap.h(s) for s in block}
            locals_ = {x & au.masks[agent] for x in images}
            if len(locals_) > 1 or not images <= ai.states:
                s = min(block)
                return SimulationResult(False, 4, (agent, s), "epistemic relation not matched")
    return SimulationResult(True)
