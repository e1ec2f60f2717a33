"""Interpreted systems: proposition universe, guarded actions, the read-permission
split of actions, and the symbolic transition functions.

Global states are Python ints used as bitvectors over the universe.  The
environment ``e`` owns the policy propositions; every agent ``i`` owns
``i.loc.p`` (its local copy of ``p``) and ``i.read.p`` (read access flag) for
each policy proposition ``p``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from acverify.boolean import (
    compile_formula,
    evaluate,
    exists_quantify,
    is_satisfiable,
    models,
    simplify,
    substitute,
)
from acverify.formula import (
    FALSE,
    TRUE,
    And,
    Formula,
    Not,
    atoms,
    conj,
    disj,
    local_name,
)
from acverify.policy import CapacityError, GroundAction, GroundPolicy, Query

log = logging.getLogger(__name__)

ENV = "e"
DEFAULT_MAX_ACTIONS = 200_000


class EmptyInitialStates(UserWarning):
    """The initial condition has no models; every property holds vacuously."""


# ---------------------------------------------------------------- universe


class Universe:
    """Ordered proposition set with an owner for every proposition."""

    def __init__(self, owners: Mapping[str, Iterable[str]]):
        names: list[str] = []
        owner: dict[str, str] = {}
        self.agents: tuple[str, ...] = tuple(owners)
        for agent, props in owners.items():
            for p in props:
                if p in owner:
                    raise ValueError(f"proposition {p!r} owned by both {owner[p]} and {agent}")
                owner[p] = agent
                names.append(p)
        self.names: tuple[str, ...] = tuple(names)
        self.index: dict[str, int] = {n: i for i, n in enumerate(names)}
        self.owner = owner
        self.masks: dict[str, int] = {a: 0 for a in self.agents}
        for n, i in self.index.items():
            self.masks[owner[n]] |= 1 << i
        self.full_mask = (1 << len(names)) - 1

    @classmethod
    def for_policy(cls, props: Iterable[str], agents: Iterable[str]) -> "Universe":
        props = tuple(props)
        owners: dict[str, list[str]] = {ENV: list(props)}
        for a in agents:
            owners[a] = [local_name(a, k, p) for p in props for k in ("loc", "read")]
        return cls(owners)

    @property
    def width(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Universe) and self.owner_map() == other.owner_map() and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def owner_map(self) -> dict[str, tuple[str, ...]]:
        return {a: tuple(n for n in self.names if self.owner[n] == a) for a in self.agents}

    def bit(self, name: str) -> int:
        return 1 << self.index[name]

    def mask_of(self, names: Iterable[str]) -> int:
        m = 0
        for n in names:
            m |= 1 << self.index[n]
        return m

    def true_props(self, s: int) -> list[str]:
        return [n for n, i in self.index.items() if s >> i & 1]

    def valuation(self, s: int) -> dict[str, bool]:
        return {n: bool(s >> i & 1) for n, i in self.index.items()}

    def state(self, true_names: Iterable[str]) -> int:
        return self.mask_of(true_names)

    def from_valuation(self, val: Mapping[str, bool]) -> int:
        return self.mask_of(n for n, v in val.items() if v)

    def local(self, s: int, agent: str) -> int:
        return s & self.masks[agent]

    def format_state(self, s: int, visible: Iterable[str] | None = None) -> str:
        """``{a, b}`` listing the true propositions (optionally only visible ones)."""
        names = self.names if visible is None else [n for n in self.names if n in set(visible)]
        return "{" + ", ".join(n for n in names if s >> self.index[n] & 1) + "}"


# ---------------------------------------------------------------- actions


Action = GroundAction


@dataclass(frozen=True)
class CompiledAction:
    action: Action
    set_mask: int
    clear_mask: int
    test: object = field(compare=False)

    @property
    def touched(self) -> int:
        return self.set_mask | self.clear_mask

    def enabled(self, s: int) -> bool:
        return self.test(s)

    def apply(self, s: int) -> int:
        return (s | self.set_mask) & ~self.clear_mask


def compile_action(a: Action, universe: Universe) -> CompiledAction:
    set_mask = clear_mask = 0
    for name, positive in a.effect:
        if positive:
            set_mask |= universe.bit(name)
        else:
            clear_mask |= universe.bit(name)
    if set_mask & clear_mask:
        raise ValueError(f"action {a.id} sets and clears the same proposition")
    return CompiledAction(a, set_mask, clear_mask, compile_formula(a.guard, universe.index))


# ---------------------------------------------------------------- systems


class InterpretedSystem:
    """An asynchronous interpreted system with a total protocol.

    Every action belongs to one agent; a transition fires exactly one enabled
    action.  There is no implicit idle transition, so a state where no action is
    enabled has no successor.
    """

    def __init__(
        self,
        universe: Universe,
        actions: Iterable[Action],
        init: Iterable[int],
        name: str = "",
    ):
        self.universe = universe
        self.actions: tuple[Action, ...] = tuple(actions)
        ids = [a.id for a in self.actions]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate action ids: {dup[:3]}")
        for a in self.actions:
            if a.agent not in universe.masks:
                raise ValueError(f"action {a.id} belongs to unknown agent {a.agent!r}")
        self.compiled: tuple[CompiledAction, ...] = tuple(compile_action(a, universe) for a in self.actions)
        self.by_id: dict[str, CompiledAction] = {c.action.id: c for c in self.compiled}
        self.init: frozenset[int] = frozenset(init)
        self.name = name

    @property
    def agents(self) -> tuple[str, ...]:
        return self.universe.agents

    def successors(self, s: int) -> Iterator[tuple[Action, int]]:
        for c in self.compiled:
            if c.test(s):
                yield c.action, (s | c.set_mask) & ~c.clear_mask

    def _get(self, action: Action | str) -> CompiledAction:
        return self.by_id[action if isinstance(action, str) else action.id]

    def theta(self, action: Action | str, states: Iterable[int]) -> set[int]:
        """Image of ``states`` under ``action`` (states failing the guard drop out)."""
        c = self._get(action)
        return {(s | c.set_mask) & ~c.clear_mask for s in states if c.test(s)}

    def theta_inverse(
        self, action: Action | str, states: Iterable[int], within: Iterable[int] | None = None
    ) -> set[int]:
        """States enabling ``action`` whose successor lies in ``states``.

        With ``within`` the search is restricted to that candidate set, which is
        cheaper when the caller already knows where predecessors can live.
        """
        c = self._get(action)
        target = states if isinstance(states, (set, frozenset)) else set(states)
        if within is not None:
            return {s for s in within if c.test(s) and ((s | c.set_mask) & ~c.clear_mask) in target}
        out: set[int] = set()
        touched = c.set_mask | c.clear_mask
        bits = [1 << i for i in range(touched.bit_length()) if touched >> i & 1]
        for t in target:
            if (t & c.set_mask) != c.set_mask or (t & c.clear_mask):
                continue
            base = t & ~touched
            for k in range(1 << len(bits)):
                s = base
                for j, b in enumerate(bits):
                    if k >> j & 1:
                        s |= b
                if c.test(s):
                    out.add(s)
        return out

    def dump(self, reachable: Iterable[int] | None = None) -> str:
        """Line-oriented text form (``.its`` syntax); round-trips through ``rawsys``."""
        from acverify.rawsys import dump_system

        return dump_system(self, reachable)

    def __repr__(self) -> str:
        return f"InterpretedSystem({self.name!r}, props={len(self.universe)}, actions={len(self.actions)}, init={len(self.init)})"


# ---------------------------------------------------------------- read guards


def read_guards(reads, props: Iterable[str], agents: Iterable[str]) -> dict[tuple[str, str], Formula]:
    """Per (agent, proposition): disjunction of read guards, ``false`` when none."""
    acc: dict[tuple[str, str], list[Formula]] = {}
    for r in reads:
        acc.setdefault((r.agent, r.target), []).append(r.guard)
    out = {}
    for a in agents:
        for p in props:
            out[(a, p)] = simplify(disj(acc.get((a, p), ())))
    return out


def _next_state(guard: Formula, effect: dict[str, bool]) -> Formula:
    return simplify(substitute(guard, {n: v for n, v in effect.items() if n in atoms(guard)}))


def inc_knowledge(
    actions: Iterable[Action],
    reads,
    props: Iterable[str],
    agents: Iterable[str],
    max_actions: int = DEFAULT_MAX_ACTIONS,
    guards: Mapping[tuple[str, str], Formula] | None = None,
) -> tuple[dict[str, tuple[str, ...]], list[Action]]:
    """Split every action so that local copies and read flags track read access.

    For each agent ``i``, policy proposition ``p`` and action ``a``, with read
    guard ``lr`` evaluated in the post-state of ``a``:

    * ``a`` writes ``p``: one variant where ``i`` can read ``p`` afterwards (the
      local copy follows the write, the read flag is set) and one where it
      cannot (read flag cleared);
    * ``a`` changes an atom of ``lr`` but not ``p``: three variants, keeping the
      copy in sync when ``p`` is true or false, or clearing the read flag;
    * otherwise ``a`` is left alone.

    Variants with unsatisfiable guards are dropped.  Returns the local
    proposition sets and the new action list.
    """
    props = tuple(props)
    agents = tuple(agents)
    if guards is None:
        guards = read_guards(reads, props, agents)
    local = {a: tuple(local_name(a, k, p) for p in props for k in ("loc", "read")) for a in agents}
    current: list[tuple[Action, dict[str, bool]]] = [(a, dict(a.effect)) for a in actions]
    for i in agents:
        for p in props:
            lr = guards[(i, p)]
            fv = atoms(lr)
            loc, rd = local_name(i, "loc", p), local_name(i, "read", p)
            nxt: list[tuple[Action, dict[str, bool]]] = []
            for act, eff in current:
                if p not in eff and not (fv & eff.keys()):
                    nxt.append((act, eff))
                    continue
                post = _next_state(lr, eff)
                if p in eff:
                    cands = [
                        ({loc: eff[p], rd: True}, post),
                        ({rd: False}, Not(post)),
                    ]
                else:
                    cands = [
                        ({loc: True, rd: True}, And((post, _atom(p)))),
                        ({loc: False, rd: True}, And((post, Not(_atom(p))))),
                        ({rd: False}, Not(post)),
                    ]
                survivors = []
                for extra, cond in cands:
                    g = simplify(And((act.guard, cond)))
                    if g == FALSE or not is_satisfiable(g):
                        continue
                    survivors.append((extra, g))
                for k, (extra, g) in enumerate(survivors, start=1):
                    e2 = {**eff, **extra}
                    aid = act.id if len(survivors) == 1 else f"{act.id}.{k}"
                    nxt.append((Action(aid, act.agent, tuple(sorted(e2.items())), g), e2))
            if len(nxt) > max_actions:
                raise CapacityError(f"read-permission split produced {len(nxt)} actions (limit {max_actions})")
            current = nxt
    return local, [a for a, _ in current]


def _atom(name: str) -> Formula:
    from acverify.formula import Atom

    return Atom(name)


# ---------------------------------------------------------------- constants


def constant_props(system: InterpretedSystem) -> tuple[dict[str, bool], list[Action]]:
    """Propositions with one value in every reachable state, and the live actions.

    Start from the propositions constant over the initial states; an action is
    dead while its guard is unsatisfiable under the constants; a constant is
    dropped once a live action writes the other value.  Repeat until stable.
    The result over-approximates reachability, so it is sound to use.
    """
    u = system.universe
    const: dict[str, bool] = {}
    for n in u.names:
        b = u.bit(n)
        vals = {bool(s & b) for s in system.init}
        if len(vals) == 1:
            const[n] = vals.pop()
    support = {a.id: atoms(a.guard) for a in system.actions}
    live: list[Action] = []
    changed = True
    while changed:
        changed = False
        keep = []
        for a in system.actions:
            g = simplify(substitute(a.guard, {n: const[n] for n in support[a.id] if n in const}))
            if g == FALSE or not is_satisfiable(g):
                continue
            keep.append(a)
            for n, v in a.effect:
                if n in const and const[n] != v:
                    del const[n]
                    changed = True
        live = keep
    return const, live


def prune_constants(system: InterpretedSystem) -> InterpretedSystem:
    """Drop dead actions and fold constant propositions into the remaining guards."""
    const, live = constant_props(system)
    actions = []
    for a in live:
        used = {n: const[n] for n in atoms(a.guard) if n in const}
        g = simplify(substitute(a.guard, used)) if used else a.guard
        actions.append(Action(a.id, a.agent, a.effect, g))
    return InterpretedSystem(system.universe, actions, system.init, name=system.name)


# ---------------------------------------------------------------- derivation


def init_formula(gp: GroundPolicy, init: Formula) -> Formula:
    """Initial condition over policy propositions: ``init`` plus the defaults
    whose conjuncts mention no atom of ``init``."""
    policy_props = set(gp.props)
    mentioned = atoms(init)
    policy_part = exists_quantify(init, mentioned - policy_props)
    defaults = gp.defaults
    parts = defaults.args if isinstance(defaults, And) else (defaults,)
    kept = [d for d in parts if not (atoms(d) & mentioned)]
    return simplify(conj((policy_part, *kept)))


@dataclass
class Derivation:
    """Intermediate results of building a system from a policy."""

    system: InterpretedSystem
    rigid: dict[str, bool]
    read_guards: dict[tuple[str, str], Formula]
    base_actions: list[Action]


def derive(
    gp: GroundPolicy,
    init: Formula = TRUE,
    max_actions: int = DEFAULT_MAX_ACTIONS,
    max_init: int = 1_000_000,
    simplify_rigid: bool = True,
) -> Derivation:
    """Build the interpreted system of a ground policy for initial condition ``init``."""
    props = gp.props
    agents = gp.agents
    universe = Universe.for_policy(props, agents)
    base = init_formula(gp, init)

    env_models: list[dict[str, bool]] = []
    for m in models(base, props):
        env_models.append(m)
        if len(env_models) > max_init:
            raise CapacityError(f"more than {max_init} initial policy valuations")

    written = set()
    for a in gp.actions:
        written.update(n for n, _ in a.effect)
    rigid: dict[str, bool] = {}
    if simplify_rigid and env_models:
        for p in props:
            if p in written:
                continue
            v = env_models[0][p]
            if all(m[p] == v for m in env_models):
                rigid[p] = v

    actions = []
    for a in gp.actions:
        g = simplify(substitute(a.guard, rigid)) if rigid else a.guard
        if g == FALSE or not is_satisfiable(g):
            continue
        actions.append(Action(a.id, a.agent, a.effect, g))
    guards = read_guards(gp.reads, props, agents)
    if rigid:
        guards = {k: simplify(substitute(g, rigid)) for k, g in guards.items()}
    _, split = inc_knowledge(actions, gp.reads, props, agents, max_actions, guards)

    init_states = set()
    has_local = bool(atoms(init) - set(props))
    check_init = compile_formula(init, universe.index) if has_local else None
    for m in env_models:
        s = universe.from_valuation(m)
        for i in agents:
            for p in props:
                lr = guards[(i, p)]
                if lr == FALSE:
                    continue
                if evaluate(lr, m):
                    s |= universe.bit(local_name(i, "read", p))
                    if m[p]:
                        s |= universe.bit(local_name(i, "loc", p))
        if check_init is None or check_init(s):
            init_states.add(s)
    if not init_states:
        warnings.warn("initial condition is unsatisfiable; the initial state set is empty", EmptyInitialStates)
    system = InterpretedSystem(universe, split, init_states, name="policy")
    if simplify_rigid and init_states:
        system = prune_constants(system)
    log.info("derived system: %d actions, %d initial states", len(split), len(init_states))
    return Derivation(system, rigid, guards, actions)


def build_is(gp: GroundPolicy, query: Query | Formula = TRUE, **kw) -> InterpretedSystem:
    init = query.init if isinstance(query, Query) else query
    return derive(gp, init, **kw).system
