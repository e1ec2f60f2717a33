"""Explicit-state CTLK model checking and tree-shaped counterexamples.

Satisfaction sets are computed over the reachable states ``G``.  Path
quantifiers use the usual fixpoint characterisation: ``EU`` is a least
fixpoint over finite prefixes and ``EG`` a greatest fixpoint, so a state
without successors satisfies no ``EG`` formula and every ``AX`` formula.
``K_i f`` holds at ``s`` when ``f`` holds at every reachable state with the same
local state for ``i``.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from acverify.formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    Const,
    Formula,
    Implies,
    K,
    Not,
    Or,
    Temporal,
    Until,
    is_propositional,
)
from acverify.kernel import InterpretedSystem
from acverify.policy import CapacityError

DEFAULT_MAX_STATES = 10_000_000


class FormulaError(ValueError):
    """Unknown atom or agent, or a formula outside the supported fragment."""


# ---------------------------------------------------------------- reachability


class ReachabilityIndex:
    """Reachable states with successor/predecessor maps and BFS parents.

    Exploration is breadth first from the sorted initial states with successors
    ordered by action id, so parent links give shortest witness paths with
    deterministic tie-breaking.
    """

    def __init__(self, system: InterpretedSystem, max_states: int = DEFAULT_MAX_STATES):
        self.system = system
        self.universe = system.universe
        order = sorted(system.compiled, key=lambda c: c.action.id)
        succ: dict[int, list[tuple[str, int]]] = {}
        parent: dict[int, tuple[int, str] | None] = {}
        queue: deque[int] = deque()
        for s in sorted(system.init):
            parent[s] = None
            queue.append(s)
        while queue:
            s = queue.popleft()
            out = []
            for c in order:
                if c.test(s):
                    t = (s | c.set_mask) & ~c.clear_mask
                    out.append((c.action.id, t))
                    if t not in parent:
                        parent[t] = (s, c.action.id)
                        queue.append(t)
                        if len(parent) > max_states:
                            raise CapacityError(f"more than {max_states} reachable states")
            succ[s] = out
        self.succ = succ
        self.parent = parent
        self.states: frozenset[int] = frozenset(parent)
        self.init: frozenset[int] = frozenset(system.init)
        pred: dict[int, list[tuple[str, int]]] = {s: [] for s in parent}
        for s, out in succ.items():
            for aid, t in out:
                pred[t].append((aid, s))
        self.pred = pred
        self._blocks: dict[str, dict[int, frozenset[int]]] = {}

    def __len__(self) -> int:
        return len(self.states)

    def blocks(self, agent: str) -> dict[int, frozenset[int]]:
        """Partition of ``G`` by the local state of ``agent``."""
        if agent not in self._blocks:
            if agent not in self.universe.masks:
                raise FormulaError(f"unknown agent {agent!r}")
            mask = self.universe.masks[agent]
            acc: dict[int, set[int]] = {}
            for s in self.states:
                acc.setdefault(s & mask, set()).add(s)
            self._blocks[agent] = {k: frozenset(v) for k, v in acc.items()}
        return self._blocks[agent]

    def related(self, agent: str, s: int) -> frozenset[int]:
        return self.blocks(agent).get(s & self.universe.masks[agent], frozenset())

    def witness(self, t: int) -> list[tuple[str | None, int]]:
        """Shortest path from an initial state to ``t`` as ``[(None, s0), (a1, s1), ...]``."""
        path: list[tuple[str | None, int]] = []
        cur: int | None = t
        while cur is not None:
            link = self.parent[cur]
            if link is None:
                path.append((None, cur))
                cur = None
            else:
                prev, aid = link
                path.append((aid, cur))
                cur = prev
        path.reverse()
        return path


def reachable(system: InterpretedSystem, max_states: int = DEFAULT_MAX_STATES) -> ReachabilityIndex:
    return ReachabilityIndex(system, max_states)


# ---------------------------------------------------------------- checking


def normalize(f: Formula) -> Formula:
    """Rewrite into atoms, ``~ & |``, ``K``, ``EX``, ``EG`` and ``EU``."""
    if isinstance(f, (Const, Atom)):
        return f
    if isinstance(f, Not):
        return Not(normalize(f.arg))
    if isinstance(f, And):
        return And(tuple(normalize(a) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(normalize(a) for a in f.args))
    if isinstance(f, Implies):
        return Or((Not(normalize(f.left)), normalize(f.right)))
    if isinstance(f, K):
        return K(f.agent, normalize(f.arg))
    if isinstance(f, Temporal):
        g = normalize(f.arg)
        op = f.op
        if op in ("EX", "EG"):
            return Temporal(op, g)
        if op == "EF":
            return Until("EU", TRUE, g)
        if op == "AX":
            return Not(Temporal("EX", Not(g)))
        if op == "AG":
            return Not(Until("EU", TRUE, Not(g)))
        if op == "AF":
            return Not(Temporal("EG", Not(g)))
    if isinstance(f, Until):
        a, b = normalize(f.left), normalize(f.right)
        if f.op == "EU":
            return Until("EU", a, b)
        if f.op == "AU":
            return Not(Or((Until("EU", Not(b), And((Not(a), Not(b)))), Temporal("EG", Not(b)))))
        if f.op == "AR":
            return Not(Until("EU", Not(a), Not(b)))
        if f.op == "ER":
            return Or((Temporal("EG", b), Until("EU", b, And((a, b)))))
    raise FormulaError(f"cannot check {f!r}")


class ModelChecker:
    """Computes satisfaction sets over a reachability index (memoised)."""

    def __init__(self, index: ReachabilityIndex):
        self.index = index
        self.G = index.states
        self._memo: dict[Formula, frozenset[int]] = {}
        self._raw: dict[Formula, frozenset[int]] = {}

    def sat(self, f: Formula) -> frozenset[int]:
        hit = self._raw.get(f)
        if hit is None:
            hit = self._raw[f] = self._sat(normalize(f))
        return hit

    def holds_at(self, f: Formula, s: int) -> bool:
        return s in self.sat(f)

    def _sat(self, f: Formula) -> frozenset[int]:
        hit = self._memo.get(f)
        if hit is not None:
            return hit
        res = self._compute(f)
        self._memo[f] = res
        return res

    def _compute(self, f: Formula) -> frozenset[int]:
        G = self.G
        if isinstance(f, Const):
            return G if f.value else frozenset()
        if isinstance(f, Atom):
            u = self.index.universe
            if f.name not in u.index:
                raise FormulaError(f"unknown proposition {f.name!r}")
            bit = u.bit(f.name)
            return frozenset(s for s in G if s & bit)
        if isinstance(f, Not):
            return G - self._sat(f.arg)
        if isinstance(f, And):
            out = G
            for a in f.args:
                out = out & self._sat(a)
            return out
        if isinstance(f, Or):
            out = frozenset()
            for a in f.args:
                out = out | self._sat(a)
            return out
        if isinstance(f, K):
            inner = self._sat(f.arg)
            out: set[int] = set()
            for block in self.index.blocks(f.agent).values():
                if block <= inner:
                    out |= block
            return frozenset(out)
        if isinstance(f, Temporal) and f.op == "EX":
            return self._ex(self._sat(f.arg))
        if isinstance(f, Temporal) and f.op == "EG":
            return self._eg(self._sat(f.arg))
        if isinstance(f, Until) and f.op == "EU":
            return self._eu(self._sat(f.left), self._sat(f.right))
        raise FormulaError(f"unexpected node {f!r}")

    def _ex(self, target: frozenset[int]) -> frozenset[int]:
        pred = self.index.pred
        return frozenset(s for t in target for _, s in pred[t])

    def _eu(self, a: frozenset[int], b: frozenset[int]) -> frozenset[int]:
        pred = self.index.pred
        out = set(b)
        queue = deque(b)
        while queue:
            t = queue.popleft()
            for _, s in pred[t]:
                if s not in out and s in a:
                    out.add(s)
                    queue.append(s)
        return frozenset(out)

    def _eg(self, a: frozenset[int]) -> frozenset[int]:
        # remove states with no successor inside the set until stable
        succ, pred = self.index.succ, self.index.pred
        count = {s: sum(1 for _, t in succ[s] if t in a) for s in a}
        alive = set(a)
        queue = deque(s for s, c in count.items() if c == 0)
        while queue:
            s = queue.popleft()
            if s not in alive:
                continue
            alive.discard(s)
            for _, p in pred[s]:
                if p in alive:
                    count[p] -= 1
                    if count[p] == 0:
                        queue.append(p)
        return frozenset(alive)


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    sat: frozenset
    failing_init: tuple = ()

    def __bool__(self) -> bool:
        return self.holds


def check(
    target: InterpretedSystem | ReachabilityIndex,
    f: Formula,
    max_states: int = DEFAULT_MAX_STATES,
) -> CheckResult:
    index = target if isinstance(target, ReachabilityIndex) else reachable(target, max_states)
    _validate(f, index)
    sat = ModelChecker(index).sat(f)
    failing = tuple(sorted(index.init - sat))
    return CheckResult(not failing, sat, failing)


def _validate(f: Formula, index: ReachabilityIndex) -> None:
    from acverify.formula import walk

    u = index.universe
    for n in walk(f):
        if isinstance(n, Atom) and n.name not in u.index:
            raise FormulaError(f"unknown proposition {n.name!r}")
        if isinstance(n, K) and n.agent not in u.masks:
            raise FormulaError(f"unknown agent {n.agent!r}")
        if not isinstance(n, (Const, Atom, Not, And, Or, Implies, K, Temporal, Until)):
            raise FormulaError(f"unsupported node {type(n).__name__}")


# ---------------------------------------------------------------- ACTLK


def actlk_nnf(f: Formula, negate: bool = False) -> Formula:
    """Push negations inward using universal path operators where possible.

    ``~K_i g`` with propositional ``g`` is kept as a leaf; other negated
    modalities produce existential operators, which :func:`is_actlk` rejects.
    """
    if isinstance(f, Const):
        return Const(f.value != negate)
    if isinstance(f, Atom):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return actlk_nnf(f.arg, not negate)
    if isinstance(f, Implies):
        return actlk_nnf(Or((Not(f.left), f.right)), negate)
    if isinstance(f, (And, Or)):
        args = tuple(actlk_nnf(a, negate) for a in f.args)
        flip = isinstance(f, And) == negate  # And under negation -> Or
        return Or(args) if flip else And(args)
    if isinstance(f, K):
        if negate:
            return Not(K(f.agent, actlk_nnf(f.arg)))
        return K(f.agent, actlk_nnf(f.arg))
    if isinstance(f, Temporal):
        dual = {"AX": "EX", "EX": "AX", "AG": "EF", "EF": "AG", "AF": "EG", "EG": "AF"}
        op = dual[f.op] if negate else f.op
        return Temporal(op, actlk_nnf(f.arg, negate))
    if isinstance(f, Until):
        a, b = f.left, f.right
        if not negate:
            return Until(f.op, actlk_nnf(a), actlk_nnf(b))
        # ~A(a U b) = E(~a R ~b), ~A(a R b) = E(~a U ~b) and duals
        dual = {"AU": "ER", "ER": "AU", "AR": "EU", "EU": "AR"}
        return Until(dual[f.op], actlk_nnf(a, True), actlk_nnf(b, True))
    raise FormulaError(f"unsupported node {f!r}")


def _is_literal(f: Formula) -> bool:
    return isinstance(f, (Const, Atom)) or (isinstance(f, Not) and isinstance(f.arg, Atom))


def is_actlk(f: Formula, safety: bool = False, allow_neg_k: bool = False) -> bool:
    """Whether the NNF of ``f`` uses only ``~p & | K AX AG AF A(U) A(R)``.

    ``safety`` excludes ``AF`` and ``AU``.  ``allow_neg_k`` additionally
    accepts ``~K_i g`` with propositional ``g``.
    """

    def ok(g: Formula) -> bool:
        if _is_literal(g):
            return True
        if isinstance(g, Not) and isinstance(g.arg, K):
            return allow_neg_k and is_propositional(g.arg.arg)
        if isinstance(g, (And, Or)):
            return all(ok(a) for a in g.args)
        if isinstance(g, K):
            return ok(g.arg)
        if isinstance(g, Temporal):
            if g.op in ("AX", "AG") or (g.op == "AF" and not safety):
                return ok(g.arg)
            return False
        if isinstance(g, Until):
            if g.op == "AR" or (g.op == "AU" and not safety):
                return ok(g.left) and ok(g.right)
            return False
        return False

    try:
        return ok(actlk_nnf(f))
    except FormulaError:
        return False


def has_negated_k(f: Formula) -> bool:
    from acverify.formula import walk

    return any(isinstance(n, Not) and isinstance(n.arg, K) for n in walk(actlk_nnf(f)))


# ---------------------------------------------------------------- counterexamples


@dataclass
class CeNode:
    id: int
    state: int
    violates: list[Formula] = field(default_factory=list)
    edges: list["CeEdge"] = field(default_factory=list)


@dataclass
class CeEdge:
    kind: str  # "temporal" or "epistemic"
    label: str  # action id or agent
    source: CeNode
    target: CeNode
    witness: tuple = ()  # epistemic: ((None, s0), (a1, s1), ..., (ak, target))


class CounterexampleTree:
    """Rooted tree of states joined by temporal and epistemic edges.

    Vertices are tree nodes, so the same system state may occur at several
    nodes.  Each epistemic edge carries a witness path from an initial state to
    its target.
    """

    def __init__(self, root_state: int, formula: Formula | None = None):
        self.nodes: list[CeNode] = []
        self.root = self.add_node(root_state)
        self.formula = formula

    def add_node(self, state: int) -> CeNode:
        n = CeNode(len(self.nodes), state)
        self.nodes.append(n)
        return n

    def add_edge(self, kind: str, label: str, source: CeNode, target_state: int, witness=()) -> CeNode:
        t = self.add_node(target_state)
        source.edges.append(CeEdge(kind, label, source, t, tuple(witness)))
        return t

    def edges(self) -> Iterator[CeEdge]:
        for n in self.nodes:
            yield from n.edges

    def parent_edge(self) -> dict[int, CeEdge]:
        return {e.target.id: e for e in self.edges()}

    def leaves(self) -> list[CeNode]:
        return [n for n in self.nodes if not n.edges]

    def paths(self) -> list[list[CeEdge]]:
        """Root-to-leaf edge sequences in depth-first order."""
        out: list[list[CeEdge]] = []

        def rec(n: CeNode, acc: list[CeEdge]) -> None:
            if not n.edges:
                if acc:
                    out.append(list(acc))
                return
            for e in n.edges:
                acc.append(e)
                rec(e.target, acc)
                acc.pop()

        rec(self.root, [])
        return out

    def size(self) -> int:
        return len(self.nodes)

    def signature(self, project=lambda s: s) -> tuple:
        """Structural fingerprint; ``project`` maps states (e.g. onto visible bits)."""

        def rec(n: CeNode):
            kids = tuple(
                (e.kind, e.label, tuple(project(s) for _, s in e.witness), rec(e.target)) for e in n.edges
            )
            return (project(n.state), kids)

        return rec(self.root)

    # -- export
    def to_dict(self, universe, visible=None) -> dict:
        def st(s):
            names = universe.names if visible is None else [n for n in universe.names if n in set(visible)]
            return [n for n in names if s >> universe.index[n] & 1]

        return {
            "root": self.root.id,
            "nodes": [
                {"id": n.id, "state": st(n.state), "violates": [str(v) for v in n.violates]}
                for n in self.nodes
            ],
            "edges": [
                {
                    "source": e.source.id,
                    "target": e.target.id,
                    "kind": e.kind,
                    "label": e.label,
                    "witness": [{"action": a, "state": st(s)} for a, s in e.witness],
                }
                for e in self.edges()
            ],
        }

    def to_json(self, universe, visible=None) -> str:
        return json.dumps(self.to_dict(universe, visible), indent=2, sort_keys=True)

    def to_text(self, universe, visible=None) -> str:
        fmt = lambda s: universe.format_state(s, visible)  # noqa: E731
        lines = []

        def rec(n: CeNode, depth: int) -> None:
            pad = "  " * depth
            tag = f"  violates: {', '.join(str(v) for v in n.violates)}" if n.violates else ""
            lines.append(f"{pad}[{n.id}] {fmt(n.state)}{tag}")
            for e in n.edges:
                if e.kind == "temporal":
                    lines.append(f"{pad}  --{e.label}-->")
                else:
                    lines.append(f"{pad}  ~{e.label}~ (witness: "
                                 + " ".join(f"{fmt(s)}" if a is None else f"-{a}-> {fmt(s)}" for a, s in e.witness)
                                 + ")")
                rec(e.target, depth + 2)

        rec(self.root, 0)
        return "\n".join(lines) + "\n"


class UnsupportedFormula(FormulaError):
    pass


def counterexample(
    target: InterpretedSystem | ReachabilityIndex,
    f: Formula,
    checker: ModelChecker | None = None,
) -> CounterexampleTree | None:
    """Tree witnessing that ``f`` fails, or ``None`` when it holds.

    Supported: ACTLK safety formulas (``AG``, ``AX``, ``A(. R .)``, ``K``,
    ``& |``, literals), plus ``~K_i g`` with propositional ``g`` as a leaf.
    """
    index = target if isinstance(target, ReachabilityIndex) else reachable(target)
    mc = checker or ModelChecker(index)
    g = actlk_nnf(f)
    if not is_actlk(f, safety=True, allow_neg_k=True):
        raise UnsupportedFormula(f"no tree counterexamples for {f}")
    sat = mc.sat(g)
    failing = sorted(index.init - sat)
    if not failing:
        return None
    tree = CounterexampleTree(failing[0], f)
    _CeBuilder(index, mc, tree).build(tree.root, g)
    return tree


class _CeBuilder:
    def __init__(self, index: ReachabilityIndex, mc: ModelChecker, tree: CounterexampleTree):
        self.index = index
        self.mc = mc
        self.tree = tree

    def fails(self, f: Formula, s: int) -> bool:
        return s not in self.mc.sat(f)

    def build(self, node: CeNode, f: Formula) -> None:
        s = node.state
        assert self.fails(f, s)
        if _is_literal(f) or (isinstance(f, Not) and isinstance(f.arg, K)):
            node.violates.append(f)
            return
        if isinstance(f, And):
            for a in f.args:
                if self.fails(a, s):
                    self.build(node, a)
                    return
        if isinstance(f, Or):
            for a in f.args:
                self.build(node, a)
            return
        if isinstance(f, K):
            node.violates.append(f)
            best = None
            for t in self.index.related(f.agent, s):
                if self.fails(f.arg, t):
                    w = self.index.witness(t)
                    key = (len(w), tuple(a or "" for a, _ in w), t)
                    if best is None or key < best[0]:
                        best = (key, t, w)
            _, t, w = best
            child = self.tree.add_edge("epistemic", f.agent, node, t, w)
            self.build(child, f.arg)
            return
        if isinstance(f, Temporal) and f.op == "AX":
            node.violates.append(f)
            for aid, t in self.index.succ[s]:
                if self.fails(f.arg, t):
                    child = self.tree.add_edge("temporal", aid, node, t)
                    self.build(child, f.arg)
                    return
        if isinstance(f, Temporal) and f.op == "AG":
            self._release(node, FALSE, f.arg, f)
            return
        if isinstance(f, Until) and f.op == "AR":
            self._release(node, f.left, f.right, f)
            return
        raise UnsupportedFormula(f"cannot build a counterexample for {f}")

    def _release(self, node: CeNode, a: Formula, b: Formula, whole: Formula) -> None:
        """Path through states violating ``a`` ending in a state violating ``b``."""
        node.violates.append(whole)
        start = node.state
        parent: dict[int, tuple[int, str] | None] = {start: None}
        queue = deque([start])
        end = None
        while queue:
            s = queue.popleft()
            if self.fails(b, s):
                end = s
                break
            if not self.fails(a, s):
                continue
            for aid, t in self.index.succ[s]:
                if t not in parent:
                    parent[t] = (s, aid)
                    queue.append(t)
        assert end is not None
        steps: list[tuple[str, int]] = []
        cur = end
        while parent[cur] is not None:
            prev, aid = parent[cur]
            steps.append((aid, cur))
            cur = prev
        steps.reverse()
        nodes = [node]
        for aid, t in steps:
            nodes.append(self.tree.add_edge("temporal", aid, nodes[-1], t))
        # intermediate states also violate the left operand
        if a != FALSE:
            for n in nodes[:-1]:
                self.build(n, a)
        self.build(nodes[-1], b)
