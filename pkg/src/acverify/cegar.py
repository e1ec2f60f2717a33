"""Counterexample validation, failure localisation and abstraction refinement.

An abstract counterexample tree is checked against the concrete system by
pushing sets of concrete states along its root-to-leaf paths.  For each tree
node ``v`` we keep ``R[v]``, the concrete candidates for ``v`` (``None`` stands
for the whole preimage ``h^-1`` of the node's abstract state).  The forward
rules follow temporal edges through the member actions of an abstract action,
and epistemic edges through the states that are reachable along the edge's
witness path and share the agent's local state.  The backward rules keep only
the states that lead to the path's leaf.

The path-by-path intersection pass is followed by further passes that use the
candidate sets while moving forward, until nothing changes.  Because nodes
form a tree, the fixpoint is non-empty at every node exactly when a concrete
counterexample tree exists.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from acverify.abstraction import Abstraction, AbstractionMap, abstract_is, initial_abstraction
from acverify.boolean import (
    Clause,
    FormulaTooLarge,
    clause_conflicts,
    clause_conflicts_cubes,
    clause_formula,
    cnf_clauses,
    cube_formula,
    state_cubes,
)
from acverify.formula import FALSE, Formula, K, Not, atoms, disj, walk
from acverify.kernel import InterpretedSystem, constant_props
from acverify.mc import (
    DEFAULT_MAX_STATES,
    CeEdge,
    CounterexampleTree,
    ModelChecker,
    ReachabilityIndex,
    UnsupportedFormula,
    actlk_nnf,
    check,
    counterexample,
    has_negated_k,
    is_actlk,
    reachable,
)

log = logging.getLogger(__name__)

CNF_LIMIT = 5000


class CegarError(RuntimeError):
    pass


class SelectionAborted(CegarError):
    """The proposition selector returned nothing while hidden candidates remain."""


# ---------------------------------------------------------------- context


class CheckContext:
    """Concrete system, abstraction and caches shared by the set computations."""

    def __init__(self, concrete: InterpretedSystem, abstraction: Abstraction, all_witnesses: bool = False):
        self.I = concrete
        self.ab = abstraction
        self.amap = abstraction.amap
        self.mask = abstraction.amap.mask
        self.members = abstraction.members
        self.all_witnesses = all_witnesses
        self._witness: dict[int, "WitnessRun"] = {}
        self._index: ReachabilityIndex | None = None

    def pre(self, abstract_state: int, states: Iterable[int]) -> set[int]:
        m = self.mask
        return {s for s in states if s & m == abstract_state}

    def init_pre(self, abstract_state: int) -> set[int]:
        return self.pre(abstract_state, self.I.init)

    def restrict(self, states: set[int], R: set[int] | None, abstract_state: int) -> set[int]:
        if R is None:
            return self.pre(abstract_state, states)
        return states & R

    def image(self, label: str, states: Iterable[int]) -> set[int]:
        out: set[int] = set()
        states = list(states)
        for m in self.members[label]:
            out |= self.I.theta(m, states)
        return out

    def preimage(self, label: str, states: set[int], within: set[int]) -> set[int]:
        out: set[int] = set()
        for m in self.members[label]:
            out |= self.I.theta_inverse(m, states, within=within)
        return out

    def local_keys(self, agent: str, states: Iterable[int]) -> set[int]:
        m = self.I.universe.masks[agent]
        return {s & m for s in states}

    def concrete_index(self) -> ReachabilityIndex:
        if self._index is None:
            self._index = reachable(self.I)
        return self._index

    def witness(self, edge: CeEdge) -> "WitnessRun":
        key = id(edge)
        if key not in self._witness:
            self._witness[key] = self._run_witness(edge)
        return self._witness[key]

    def _run_witness(self, edge: CeEdge) -> "WitnessRun":
        steps = list(edge.witness)
        target = edge.target.state
        if self.all_witnesses:
            G = self.concrete_index().states
            return WitnessRun(steps, [self.pre(target, G)], None)
        sets = [self.init_pre(steps[0][1])]
        for k, (label, abs_state) in enumerate(steps[1:], start=1):
            nxt = self.pre(abs_state, self.image(label, sets[-1]))
            sets.append(nxt)
            if not nxt:
                return WitnessRun(steps, sets, k)
        if not sets[0]:
            return WitnessRun(steps, sets, 0)
        return WitnessRun(steps, sets, None)


@dataclass
class WitnessRun:
    steps: list  # [(None, s0~), (label, s1~), ...]
    sets: list  # concrete sets per step (only the last one in all-witness mode)
    died_at: int | None  # index into steps where the set became empty

    @property
    def final(self) -> set[int]:
        return set() if self.died_at is not None else self.sets[-1]


# ---------------------------------------------------------------- path runs


def tree_paths(ce: CounterexampleTree) -> list[list[CeEdge]]:
    """Root-to-leaf paths, those taking temporal edges first at each branching."""
    paths = sorted(ce.paths(), key=lambda p: [(e.kind != "temporal", e.source.edges.index(e)) for e in p])
    return paths if paths else [[]]


def path_nodes(ce: CounterexampleTree, path: Sequence[CeEdge]) -> list:
    return [ce.root] + [e.target for e in path]


@dataclass
class PathRun:
    sets: list  # concrete set at every vertex reached
    died_at: int | None = None  # index of the edge after which the set is empty

    @property
    def ok(self) -> bool:
        return self.died_at is None


def forward_step(
    ctx: CheckContext, edge: CeEdge, st: set[int], R: dict | None = None
) -> set[int]:
    """One forward step along ``edge``.

    Without ``R`` this is the plain path check; with ``R`` the result is also
    intersected with the candidates of the edge's target node.
    """
    target = edge.target
    Rv = None if R is None else R.get(target.id)
    if edge.kind == "temporal":
        img = ctx.image(edge.label, st)
        return ctx.restrict(img, Rv, target.state)
    w = ctx.witness(edge).final
    if R is not None and Rv is not None:
        w = w & Rv
    keys = ctx.local_keys(edge.label, st)
    m = ctx.I.universe.masks[edge.label]
    return {s for s in w if s & m in keys}


def run_forward(ctx: CheckContext, ce: CounterexampleTree, path, start: set[int], R: dict | None = None) -> PathRun:
    sets = [set(start)]
    if not start:
        return PathRun(sets, -1)
    for k, e in enumerate(path):
        nxt = forward_step(ctx, e, sets[-1], R)
        sets.append(nxt)
        if not nxt:
            return PathRun(sets, k)
    return PathRun(sets)


def run_backward(ctx: CheckContext, ce: CounterexampleTree, path, run: PathRun) -> dict[int, set[int]]:
    """States at each vertex of ``path`` that lead to the leaf set of ``run``."""
    nodes = path_nodes(ce, path)
    r: dict[int, set[int]] = {nodes[-1].id: set(run.sets[-1])}
    st = run.sets[-1]
    for k in range(len(path) - 1, -1, -1):
        e = path[k]
        fwd = run.sets[k]
        if e.kind == "temporal":
            rs = ctx.preimage(e.label, st, fwd)
        else:
            w = ctx.witness(e).final
            keys = ctx.local_keys(e.label, st & w)
            m = ctx.I.universe.masks[e.label]
            rs = {s for s in fwd if s & m in keys}
        r[nodes[k].id] = rs
        st = rs
    return r


# ---------------------------------------------------------------- check_ce


@dataclass
class CeCheck:
    valid: bool
    R: dict
    stage: str = ""  # "forward", "intersection" or "sweep" for spurious results
    path: int | None = None
    node: int | None = None
    sweeps: int = 0
    concrete: CounterexampleTree | None = None

    def __bool__(self) -> bool:
        return self.valid


def check_ce(
    ce: CounterexampleTree,
    concrete: InterpretedSystem,
    abstraction: Abstraction,
    all_witnesses: bool = False,
    ctx: CheckContext | None = None,
    concretize: bool = True,
) -> CeCheck:
    """Decide whether the abstract tree ``ce`` has a concrete counterpart."""
    ctx = ctx or CheckContext(concrete, abstraction, all_witnesses)
    if ce.root.state not in abstraction.system.init:
        raise CegarError("counterexample root is not an abstract initial state")
    paths = tree_paths(ce)
    R: dict[int, set[int] | None] = {n.id: None for n in ce.nodes}
    R[ce.root.id] = ctx.init_pre(ce.root.state)
    if not R[ce.root.id]:
        return CeCheck(False, R, "forward", 0, ce.root.id)

    # path by path, intersecting per-node survivors
    for idx, path in enumerate(paths):
        run = run_forward(ctx, ce, path, R[ce.root.id])
        if not run.ok:
            return CeCheck(False, R, "forward", idx)
        r = run_backward(ctx, ce, path, run)
        for nid, rs in r.items():
            R[nid] = rs if R[nid] is None else R[nid] & rs
            if not R[nid]:
                return CeCheck(False, R, "intersection", idx, nid)

    # propagate the candidate sets until stable
    sweeps = 0
    changed = True
    while changed:
        changed = False
        sweeps += 1
        for idx, path in enumerate(paths):
            run = run_forward(ctx, ce, path, R[ce.root.id], R)
            if not run.ok:
                return CeCheck(False, R, "sweep", idx, sweeps=sweeps)
            r = run_backward(ctx, ce, path, run)
            for nid, rs in r.items():
                cur = R[nid]
                new = rs if cur is None else cur & rs
                if cur is None or len(new) < len(cur):
                    R[nid] = new
                    changed = True
                if not new:
                    return CeCheck(False, R, "sweep", idx, nid, sweeps)
    result = CeCheck(True, R, sweeps=sweeps)
    if concretize:
        result.concrete = concretize_tree(ctx, ce, R)
    return result


def concretize_tree(ctx: CheckContext, ce: CounterexampleTree, R: dict) -> CounterexampleTree:
    """Pick one concrete state per node (top down) from the final candidate sets."""
    I = ctx.I
    root_state = min(R[ce.root.id])
    tree = CounterexampleTree(root_state, ce.formula)
    tree.root.violates = list(ce.root.violates)

    def rec(anode, cnode) -> None:
        s = cnode.state
        for e in anode.edges:
            cands = R[e.target.id]
            choice = None
            if e.kind == "temporal":
                for m in sorted(ctx.members[e.label]):
                    t = I.theta(m, [s])
                    if t and next(iter(t)) in cands:
                        choice = (m, next(iter(t)), ())
                        break
            else:
                mask = I.universe.masks[e.label]
                for t in sorted(cands):
                    if t & mask == s & mask:
                        choice = (e.label, t, concrete_witness(ctx, e, t))
                        break
            if choice is None:
                raise CegarError("internal error: candidate sets are not arc consistent")
            label, t, w = choice
            child = tree.add_edge(e.kind, label, cnode, t, w)
            child.violates = list(e.target.violates)
            rec(e.target, child)

    rec(ce.root, tree.root)
    return tree


def concrete_witness(ctx: CheckContext, edge: CeEdge, t: int) -> tuple:
    """Concrete path from an initial state to ``t`` following the edge's witness."""
    if ctx.all_witnesses:
        return tuple(ctx.concrete_index().witness(t))
    run = ctx.witness(edge)
    steps = run.steps
    path = [(None, t)]
    cur = t
    for k in range(len(steps) - 1, 0, -1):
        label = steps[k][0]
        prev_set = run.sets[k - 1]
        found = None
        for m in sorted(ctx.members[label]):
            pre = ctx.I.theta_inverse(m, {cur}, within=prev_set)
            if pre:
                found = (m, min(pre))
                break
        assert found is not None
        path[-1] = (found[0], cur)
        path.append((None, found[1]))
        cur = found[1]
    path.reverse()
    return tuple(path)


# ---------------------------------------------------------------- failure analysis


@dataclass
class Conflict:
    """A base/conflict formula pair with its conflict clauses."""

    label: str
    base: Formula
    conflict: Formula
    clauses: list = field(default_factory=list)
    chosen: Clause | None = None
    escalated: frozenset = frozenset()

    @property
    def props(self) -> frozenset:
        if self.chosen is not None:
            return frozenset(n for n, _ in self.chosen)
        return self.escalated


@dataclass
class FailureDiagnosis:
    kind: str  # T1, T2 (temporal); E1, E2, E3 (epistemic)
    node: int  # failure node id in the tree
    state: int  # abstract failure state
    edge: CeEdge | None
    dead_end: set
    bad: set | None
    conflicts: list
    props: frozenset = frozenset()
    witness: "FailureDiagnosis | None" = None
    path: int | None = None

    @property
    def clauses(self) -> list:
        return [c.chosen for c in self.conflicts if c.chosen is not None]

    def describe(self, universe, visible=None) -> str:
        kinds = {
            "T1": "no member action is enabled on the dead-end states",
            "T2": "successors of the dead-end states miss the candidates of the next node",
            "E1": "the epistemic witness path is spurious",
            "E2": "witness-reachable states miss the candidates of the next node",
            "E3": "no shared local state with the epistemic target",
        }
        lines = [
            f"failure at node {self.node} {universe.format_state(self.state, visible)}: {kinds[self.kind]}",
            f"  dead-end states: {len(self.dead_end)}",
        ]
        for c in self.conflicts:
            chosen = str(clause_formula(c.chosen)) if c.chosen is not None else "(escalated)"
            lines.append(f"  [{c.label}] clause: {chosen}")
        lines.append(f"  new visible: {', '.join(sorted(self.props))}")
        if self.witness is not None:
            lines.append("  witness analysis:")
            lines += ["    " + l for l in self.witness.describe(universe, visible).splitlines()]
        return "\n".join(lines) + "\n"


def conflict_clauses(base: Formula, conflict: Formula, limit: int = CNF_LIMIT) -> list[Clause]:
    """Conjuncts ``c`` of ``cnf(conflict)`` with ``c & base`` unsatisfiable, smallest first."""
    clauses = cnf_clauses(conflict, limit)
    good = [c for c in clauses if clause_conflicts(c, base)]
    return sorted(good, key=lambda c: (len(c), sorted(c)))


def _clause_key(c: Clause):
    return (len(c), sorted(c))


def _varying(states: Iterable[int], universe, names: Iterable[str]) -> list[str]:
    states = list(states)
    out = []
    for n in names:
        b = universe.bit(n)
        vals = {bool(s & b) for s in states}
        if len(vals) > 1:
            out.append(n)
    return out


def _set_conflict(label: str, base_states, conflict_states, universe, hidden, restrict_agent=None) -> Conflict:
    """Conflict between two disjoint state sets inside one abstract state.

    Both sets are described over the hidden propositions that vary across
    them; this keeps them disjoint since they agree on all visible ones.
    """
    names = [n for n in universe.names if n in hidden]
    if restrict_agent is not None:
        names = [n for n in names if universe.owner[n] == restrict_agent]
    P = _varying(list(base_states) + list(conflict_states), universe, names)
    props = [(n, universe.index[n]) for n in P]
    base_cubes = state_cubes(base_states, props)
    conf_cubes = state_cubes(conflict_states, props)
    base_f = disj(cube_formula(c) for c in base_cubes)
    conf_f = disj(cube_formula(c) for c in conf_cubes)
    c = Conflict(label, base_f, conf_f)
    try:
        clauses = cnf_clauses(conf_f, CNF_LIMIT)
    except FormulaTooLarge:
        c.escalated = frozenset(P)
        return c
    good = sorted((cl for cl in clauses if clause_conflicts_cubes(cl, base_cubes)), key=_clause_key)
    c.clauses = good
    if good and good[0]:
        c.chosen = good[0]
    else:
        c.escalated = frozenset(P)
    return c


def _guard_conflict(label: str, guard: Formula, dead: set[int], universe, hidden) -> Conflict:
    """Conflict between an action guard and the dead-end states it never enables."""
    names = sorted(atoms(guard), key=universe.index.get)
    props = [(n, universe.index[n]) for n in names]
    base_cubes = state_cubes(dead, props)
    base_f = disj(cube_formula(c) for c in base_cubes)
    c = Conflict(label, base_f, guard)
    try:
        clauses = cnf_clauses(guard, CNF_LIMIT)
    except FormulaTooLarge:
        c.escalated = frozenset(n for n in names if n in hidden)
        return c
    good = sorted((cl for cl in clauses if clause_conflicts_cubes(cl, base_cubes)), key=_clause_key)
    c.clauses = good
    if good and any(n in hidden for n, _ in good[0]):
        c.chosen = good[0]
    else:
        c.escalated = frozenset(n for n in names if n in hidden)
    return c


def _diagnose_temporal(
    ctx: CheckContext, label: str, dead: set[int], Rv: set[int] | None, node_id, abs_state, edge, pool=None
) -> FailureDiagnosis:
    I = ctx.I
    u = I.universe
    hidden = ctx.amap.hidden
    conflicts = []
    enabled = {}
    for m in ctx.members[label]:
        img = I.theta(m, dead)
        if img:
            enabled[m] = img
    bad = None
    if pool is not None and edge is not None:
        bad = _bad_temporal(ctx, label, pool, Rv, edge.target.state)
    if not enabled:
        kind = "T1"
        for m in ctx.members[label]:
            conflicts.append(_guard_conflict(m, I.by_id[m].action.guard, dead, u, hidden))
    else:
        kind = "T2"
        for m in ctx.members[label]:
            if m in enabled:
                conflicts.append(_set_conflict(m, Rv, enabled[m], u, hidden))
            else:
                conflicts.append(_guard_conflict(m, I.by_id[m].action.guard, dead, u, hidden))
    props = frozenset().union(*(c.props for c in conflicts)) & hidden
    return FailureDiagnosis(kind, node_id, abs_state, edge, dead, bad, conflicts, props)


def _bad_temporal(ctx: CheckContext, label: str, pool: set[int], Rv, target: int) -> set[int]:
    """States of ``pool`` with a member step into the next node's candidates."""
    out: set[int] = set()
    for s in pool:
        for m in ctx.members[label]:
            t = ctx.I.theta(m, [s])
            if t and ctx.restrict(t, Rv, target):
                out.add(s)
                break
    return out


def _diagnose_witness(ctx: CheckContext, edge: CeEdge, node_id) -> FailureDiagnosis:
    run = ctx.witness(edge)
    k = run.died_at
    if k == 0:
        raise CegarError("internal error: witness starts outside the initial states")
    label, abs_state = run.steps[k]
    prev_abs = run.steps[k - 1][1]
    return _diagnose_temporal(ctx, label, run.sets[k - 1], None, node_id, prev_abs, None)


def find_failure(
    ce: CounterexampleTree,
    concrete: InterpretedSystem,
    abstraction: Abstraction,
    all_witnesses: bool = False,
    ctx: CheckContext | None = None,
    max_rounds: int = 1000,
) -> FailureDiagnosis:
    """Locate the failure node of a spurious tree and derive conflict clauses.

    Paths are added one at a time; each is replayed from the root while
    intersecting with the candidate sets of the paths seen so far, and the
    first edge where the replay runs dry is analysed.  If a complete round
    passes, the rounds repeat with the accumulated candidate sets.
    """
    ctx = ctx or CheckContext(concrete, abstraction, all_witnesses)
    u = concrete.universe
    hidden = ctx.amap.hidden
    paths = tree_paths(ce)
    R: dict[int, set[int] | None] = {n.id: None for n in ce.nodes}
    R[ce.root.id] = ctx.init_pre(ce.root.state)
    if not R[ce.root.id]:
        raise CegarError("counterexample root has no concrete initial state")
    for _ in range(max_rounds):
        changed = False
        for idx, path in enumerate(paths):
            run = run_forward(ctx, ce, path, R[ce.root.id], R)
            if not run.ok:
                k = run.died_at
                nodes = path_nodes(ce, path)
                src, e = nodes[k], path[k]
                dead = run.sets[k]
                Rv = R[e.target.id]
                # same path without the candidate sets: the reachable part of h^-1(src)
                pool = run_forward(ctx, ce, path[:k], ctx.init_pre(ce.root.state)).sets[k]
                if e.kind == "temporal":
                    d = _diagnose_temporal(ctx, e.label, dead, Rv, src.id, src.state, e, pool)
                else:
                    w = ctx.witness(e)
                    if w.died_at is not None:
                        inner = _diagnose_witness(ctx, e, src.id)
                        d = FailureDiagnosis(
                            "E1", src.id, src.state, e, dead, None, inner.conflicts, inner.props, inner
                        )
                    else:
                        reach = w.final
                        X = reach if Rv is None else reach & Rv
                        if not X:
                            c = _set_conflict("witness", Rv, reach, u, hidden)
                            d = FailureDiagnosis("E2", src.id, src.state, e, dead, set(), [c], c.props & hidden)
                        else:
                            mask = u.masks[e.label]
                            keys = ctx.local_keys(e.label, X)
                            bad = {s for s in pool if s & mask in keys}
                            c = _set_conflict(
                                e.label,
                                {s & mask for s in dead},
                                keys,
                                u,
                                hidden,
                                restrict_agent=e.label,
                            )
                            d = FailureDiagnosis("E3", src.id, src.state, e, dead, bad, [c], c.props & hidden)
                d.path = idx
                return d
            r = run_backward(ctx, ce, path, run)
            for nid, rs in r.items():
                cur = R[nid]
                new = rs if cur is None else cur & rs
                if cur is None or len(new) < len(cur):
                    changed = True
                R[nid] = new
        if not changed:
            break
    raise CegarError("no failure state found; the counterexample is not spurious")


def refine(amap: AbstractionMap, diagnosis: FailureDiagnosis) -> AbstractionMap:
    """Add the propositions of the chosen conflict clauses; always grows."""
    new = diagnosis.props - amap.visible
    if not new:
        # escalate: every hidden proposition on which dead-end and bad states differ
        states = set(diagnosis.dead_end) | set(diagnosis.bad or ())
        new = frozenset(_varying(states, amap.universe, sorted(amap.hidden)))
    if not new:
        new = amap.hidden
    if not new:
        raise CegarError("refinement requested on the identity abstraction")
    return amap.refine(new)


# ---------------------------------------------------------------- the loop


@dataclass
class TraceEntry:
    iteration: int
    visible: int
    abstract_states: int
    verdict: str  # "holds" or "fails"
    ce_status: str = ""  # "spurious", "valid" or "" when the abstract model holds
    failure: str = ""
    failure_kind: str = ""
    clauses: list = field(default_factory=list)
    added: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    signature: tuple | None = field(default=None, repr=False)
    visible_set: frozenset = field(default=frozenset(), repr=False)
    ce: CounterexampleTree | None = field(default=None, repr=False)
    members: dict = field(default_factory=dict, repr=False)  # class id -> concrete action ids

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "visible": self.visible,
            "abstract_states": self.abstract_states,
            "verdict": self.verdict,
            "counterexample": self.ce_status,
            "failure_state": self.failure,
            "failure_kind": self.failure_kind,
            "clauses": self.clauses,
            "added": self.added,
            "selected": self.selected,
        }


@dataclass
class CegarResult:
    holds: bool
    confirmed: bool
    trace: list
    amap: AbstractionMap
    counterexample: CounterexampleTree | None = None
    abstract_counterexample: CounterexampleTree | None = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def refinements(self) -> int:
        return sum(1 for t in self.trace if t.ce_status == "spurious" or t.selected)

    @property
    def max_abstract_states(self) -> int:
        return max((t.abstract_states for t in self.trace), default=0)

    @property
    def total_abstract_states(self) -> int:
        return sum(t.abstract_states for t in self.trace)


PropSelector = Callable[[str, list], Iterable[str]]


def static_props(system: InterpretedSystem) -> frozenset:
    """Propositions that keep one value in every reachable state."""
    return frozenset(constant_props(system)[0])


def negated_k_agents(f: Formula) -> list[str]:
    out = []
    for n in walk(actlk_nnf(f)):
        if isinstance(n, Not) and isinstance(n.arg, K) and n.arg.agent not in out:
            out.append(n.arg.agent)
    return out


def cegar_loop(
    concrete: InterpretedSystem,
    prop: Formula,
    init: Formula | None = None,
    mode: str = "automatic",
    prop_selector: PropSelector | None = None,
    extra_visible: Iterable[str] = (),
    all_witnesses: bool = False,
    max_iterations: int | None = None,
    max_states: int = DEFAULT_MAX_STATES,
    on_iteration: Callable[[TraceEntry], None] | None = None,
) -> CegarResult:
    """Abstract, check, validate and refine until a verdict is reached.

    ``mode="automatic"`` needs an ACTLK safety property.  ``mode="interactive"``
    also accepts ``~K_i g`` with propositional ``g``: when the abstract model
    satisfies the property, ``prop_selector(agent, candidates)`` chooses hidden
    local propositions of ``agent`` to reveal.  Once no candidates remain the
    abstract verdict is reported with ``confirmed=False``.  Local propositions
    that never change are not offered since revealing them cannot matter.
    """
    if mode not in ("automatic", "interactive"):
        raise ValueError(f"unknown mode {mode!r}")
    interactive = mode == "interactive"
    if not is_actlk(prop, safety=True, allow_neg_k=interactive):
        raise UnsupportedFormula(
            f"{prop} is not an ACTLK safety property"
            + ("" if interactive else " (interactive mode accepts ~K over propositional formulas)")
        )
    neg_k = negated_k_agents(prop) if interactive else []
    static = static_props(concrete) if neg_k else frozenset()
    amap = initial_abstraction(concrete, prop, init, extra_visible)
    trace: list[TraceEntry] = []
    limit = max_iterations if max_iterations is not None else len(amap.hidden) + 1
    for it in range(1, limit + 2):
        ab = abstract_is(concrete, amap)
        ai = reachable(ab.system, max_states)
        mc = ModelChecker(ai)
        res = check(ai, prop)
        entry = TraceEntry(it, len(amap.visible), len(ai), "holds" if res.holds else "fails", visible_set=amap.visible)
        trace.append(entry)
        if res.holds:
            if neg_k:
                owner = concrete.universe.owner
                cands = {
                    a: [n for n in concrete.universe.names if n in amap.hidden and owner[n] == a and n not in static]
                    for a in neg_k
                }
                pending = [a for a in neg_k if cands[a]]
                if pending:
                    if prop_selector is None:
                        raise SelectionAborted("interactive refinement needs a proposition selector")
                    chosen: list[str] = []
                    for a in pending:
                        picked = [n for n in prop_selector(a, cands[a]) if n in cands[a]]
                        chosen += picked
                    if not chosen:
                        raise SelectionAborted(
                            f"no propositions selected while {sum(len(v) for v in cands.values())} remain hidden"
                        )
                    entry.selected = sorted(chosen)
                    _emit(on_iteration, entry)
                    amap = amap.refine(chosen)
                    continue
                _emit(on_iteration, entry)
                return CegarResult(True, False, trace, amap)
            _emit(on_iteration, entry)
            return CegarResult(True, True, trace, amap)
        ce = counterexample(ai, prop, mc)
        entry.signature = ce.signature(lambda s: s)
        entry.ce = ce
        entry.members = ab.members
        ctx = CheckContext(concrete, ab, all_witnesses)
        verdict = check_ce(ce, concrete, ab, ctx=ctx)
        if verdict.valid:
            entry.ce_status = "valid"
            _emit(on_iteration, entry)
            return CegarResult(False, True, trace, amap, verdict.concrete, ce)
        entry.ce_status = "spurious"
        diag = find_failure(ce, concrete, ab, ctx=ctx)
        new_map = refine(amap, diag)
        u = concrete.universe
        entry.failure = u.format_state(diag.state, amap.visible)
        entry.failure_kind = diag.kind
        entry.clauses = list(dict.fromkeys(str(clause_formula(c)) for c in diag.clauses))
        entry.added = sorted(new_map.visible - amap.visible)
        _emit(on_iteration, entry)
        log.info("iteration %d: spurious (%s at %s), adding %s", it, diag.kind, entry.failure, entry.added)
        amap = new_map
    raise CegarError("refinement did not converge")


def _emit(cb, entry) -> None:
    if cb is not None:
        cb(entry)


def scripted_selector(batches: Sequence[Sequence[str]]) -> PropSelector:
    """Selector replaying fixed batches; ``*`` selects every candidate."""
    queue = [list(b) for b in batches]

    def select(agent: str, candidates: list) -> list:
        if not queue:
            return []
        batch = queue.pop(0)
        if "*" in batch:
            return list(candidates)
        return batch

    return select
