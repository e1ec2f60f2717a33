"""Propositional machinery: simplification, evaluation, satisfiability,
existential quantification, CNF and state-set formulas.

Literals are ``(name, polarity)`` pairs; clauses and cubes are frozensets of
literals.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Iterator, Mapping

from acverify.formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    Const,
    Formula,
    Implies,
    Not,
    Or,
    atoms,
    conj,
    disj,
)

Literal = tuple[str, bool]
Clause = frozenset  # frozenset[Literal]


class FormulaTooLarge(Exception):
    """Raised when CNF distribution or truth-table work exceeds its bound."""


def literal(f: Formula) -> Literal | None:
    if isinstance(f, Atom):
        return (f.name, True)
    if isinstance(f, Not) and isinstance(f.arg, Atom):
        return (f.arg.name, False)
    return None


def lit_formula(lit: Literal) -> Formula:
    name, pol = lit
    return Atom(name) if pol else Not(Atom(name))


def simplify(f: Formula) -> Formula:
    """Constant folding, flattening, duplicate and complementary-literal removal.

    Implications are rewritten as disjunctions.  Non-propositional nodes are
    left in place with simplified operands.
    """
    if isinstance(f, (Const, Atom)):
        return f
    if isinstance(f, Not):
        a = simplify(f.arg)
        if isinstance(a, Const):
            return FALSE if a.value else TRUE
        if isinstance(a, Not):
            return a.arg
        return Not(a)
    if isinstance(f, Implies):
        return simplify(Or((Not(f.left), f.right)))
    if isinstance(f, (And, Or)):
        is_and = isinstance(f, And)
        unit, zero = (TRUE, FALSE) if is_and else (FALSE, TRUE)
        out: list[Formula] = []
        seen: set[Formula] = set()
        lits: set[Literal] = set()
        stack = list(reversed(f.args))
        while stack:
            a = simplify(stack.pop())
            if type(a) is type(f):
                stack.extend(reversed(a.args))
                continue
            if a == unit:
                continue
            if a == zero:
                return zero
            if a in seen:
                continue
            lit = literal(a)
            if lit is not None:
                if (lit[0], not lit[1]) in lits:
                    return zero
                lits.add(lit)
            seen.add(a)
            out.append(a)
        if not out:
            return unit
        if len(out) == 1:
            return out[0]
        return And(tuple(out)) if is_and else Or(tuple(out))
    # modal / quantified nodes: rebuild with simplified children
    from dataclasses import fields, replace

    updates = {}
    for fld in fields(f):
        v = getattr(f, fld.name)
        if isinstance(v, Formula):
            updates[fld.name] = simplify(v)
    return replace(f, **updates)


def substitute(f: Formula, values: Mapping[str, bool]) -> Formula:
    """Replace atoms by constants (no simplification)."""
    if isinstance(f, Atom):
        if f.name in values:
            return TRUE if values[f.name] else FALSE
        return f
    if isinstance(f, Const):
        return f
    if isinstance(f, Not):
        return Not(substitute(f.arg, values))
    if isinstance(f, And):
        return And(tuple(substitute(a, values) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(substitute(a, values) for a in f.args))
    if isinstance(f, Implies):
        return Implies(substitute(f.left, values), substitute(f.right, values))
    raise TypeError(f"not a propositional formula: {f!r}")


def evaluate(f: Formula, value: Callable[[str], bool] | Mapping[str, bool]) -> bool:
    get = value.__getitem__ if isinstance(value, Mapping) else value
    if isinstance(f, Atom):
        return bool(get(f.name))
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Not):
        return not evaluate(f.arg, get)
    if isinstance(f, And):
        return all(evaluate(a, get) for a in f.args)
    if isinstance(f, Or):
        return any(evaluate(a, get) for a in f.args)
    if isinstance(f, Implies):
        return (not evaluate(f.left, get)) or evaluate(f.right, get)
    raise TypeError(f"not a propositional formula: {f!r}")


def nnf(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form of a propositional formula."""
    if isinstance(f, Const):
        return Const(f.value != negate)
    if isinstance(f, Atom):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return nnf(f.arg, not negate)
    if isinstance(f, Implies):
        return nnf(Or((Not(f.left), f.right)), negate)
    if isinstance(f, And):
        args = tuple(nnf(a, negate) for a in f.args)
        return Or(args) if negate else And(args)
    if isinstance(f, Or):
        args = tuple(nnf(a, negate) for a in f.args)
        return And(args) if negate else Or(args)
    raise TypeError(f"not a propositional formula: {f!r}")


def _pick_var(f: Formula) -> str | None:
    stack = [f]
    while stack:
        n = stack.pop()
        if isinstance(n, Atom):
            return n.name
        if isinstance(n, Not):
            stack.append(n.arg)
        elif isinstance(n, (And, Or)):
            stack.extend(reversed(n.args))
        elif isinstance(n, Implies):
            stack.extend((n.right, n.left))
    return None


def is_satisfiable(f: Formula) -> bool:
    """Shannon-expansion satisfiability check with constant propagation."""
    f = simplify(f)
    if isinstance(f, Const):
        return f.value
    x = _pick_var(f)
    assert x is not None
    return is_satisfiable(substitute(f, {x: True})) or is_satisfiable(
        substitute(f, {x: False})
    )


def equivalent(f: Formula, g: Formula) -> bool:
    return not is_satisfiable(Or((And((f, Not(g))), And((Not(f), g)))))


def models(f: Formula, variables: Iterable[str]) -> Iterator[dict[str, bool]]:
    """All assignments over ``variables`` satisfying ``f``.

    Variables not occurring in ``f`` range freely.  ``f`` must only mention
    names from ``variables``.
    """
    order = list(variables)

    def rec(g: Formula, i: int, acc: dict[str, bool]) -> Iterator[dict[str, bool]]:
        g = simplify(g)
        if g == FALSE:
            return
        if i == len(order):
            if g != TRUE:
                raise ValueError(f"formula mentions unknown atoms: {sorted(atoms(g))}")
            yield dict(acc)
            return
        x = order[i]
        for val in (False, True):
            acc[x] = val
            yield from rec(substitute(g, {x: val}) if g != TRUE else g, i + 1, acc)
        del acc[x]

    yield from rec(f, 0, {})


def exists_quantify(f: Formula, hidden: Iterable[str]) -> Formula:
    """``exists H. f`` by cofactor disjunction ``f[0/x] | f[1/x]``.

    Quantifiers are pushed through disjunctions and through conjunctions
    whose conjuncts share no quantified variable.
    """
    hidden = frozenset(hidden)
    return _exists(simplify(nnf(simplify(f))), hidden)


def _exists(f: Formula, hidden: frozenset[str]) -> Formula:
    rel = atoms(f) & hidden
    if not rel:
        return f
    lit = literal(f)
    if lit is not None:
        return TRUE
    if isinstance(f, Or):
        return simplify(disj(_exists(a, hidden) for a in f.args))
    if isinstance(f, And):
        groups = _connected(f.args, hidden)
        if len(groups) > 1:
            return simplify(conj(_exists(conj(g), hidden) for g in groups))
    x = min(rel)
    rest = hidden - {x}
    lo = simplify(substitute(f, {x: False}))
    hi = simplify(substitute(f, {x: True}))
    return simplify(Or((_exists(lo, rest), _exists(hi, rest))))


def _connected(args: tuple[Formula, ...], hidden: frozenset[str]) -> list[list[Formula]]:
    # union-find over conjuncts linked by shared hidden variables
    groups: list[tuple[set[str], list[Formula]]] = []
    for a in args:
        vs = set(atoms(a) & hidden)
        merged_vars, merged_args = set(vs), [a]
        keep = []
        for gv, ga in groups:
            if gv & vs:
                merged_vars |= gv
                merged_args = ga + merged_args
            else:
                keep.append((gv, ga))
        groups = keep + [(merged_vars, merged_args)]
    return [ga for _, ga in groups]


def truth_table(f: Formula, variables: list[str], limit: int = 20) -> tuple[bool, ...]:
    if len(variables) > limit:
        raise FormulaTooLarge(f"truth table over {len(variables)} > {limit} variables")
    out = []
    for bits in itertools.product((False, True), repeat=len(variables)):
        out.append(evaluate(f, dict(zip(variables, bits))))
    return tuple(out)


def canonical_function(f: Formula, limit: int = 20) -> tuple[tuple[str, ...], tuple[bool, ...]]:
    """Support-reduced truth table: equal results iff ``f`` are semantically equal."""
    f = simplify(f)
    support = sorted(atoms(f))
    table = truth_table(f, support, limit)
    # drop variables the function does not depend on
    changed = True
    while changed:
        changed = False
        for i, _ in enumerate(support):
            n = len(support)
            stride = 1 << (n - 1 - i)
            lo, hi = [], []
            for idx, v in enumerate(table):
                (hi if idx & stride else lo).append(v)
            if lo == hi:
                support = support[:i] + support[i + 1 :]
                table = tuple(lo)
                changed = True
                break
    return tuple(support), table


# ---------------------------------------------------------------- CNF


def clause_formula(clause: Iterable[Literal]) -> Formula:
    return disj(lit_formula(l) for l in sorted(clause))


def cube_formula(cube: Iterable[Literal]) -> Formula:
    return conj(lit_formula(l) for l in sorted(cube))


def _minimize(clauses: Iterable[frozenset]) -> list[frozenset]:
    uniq = sorted(set(clauses), key=lambda c: (len(c), sorted(c)))
    kept: list[frozenset] = []
    for c in uniq:
        if any(k <= c for k in kept):
            continue
        kept.append(c)
    return kept


def _tautology(clause: frozenset) -> bool:
    return any((n, not p) in clause for n, p in clause)


def cnf_clauses(f: Formula, limit: int = 20000) -> list[Clause]:
    """Conjuncts of the CNF of ``f`` obtained by distribution (no fresh variables).

    ``[]`` means ``true``; a list holding the empty clause means ``false``.
    """

    def rec(g: Formula) -> list[frozenset]:
        if isinstance(g, Const):
            return [] if g.value else [frozenset()]
        lit = literal(g)
        if lit is not None:
            return [frozenset([lit])]
        if isinstance(g, And):
            out: list[frozenset] = []
            for a in g.args:
                out.extend(rec(a))
            return _minimize(out)
        if isinstance(g, Or):
            acc: list[frozenset] = [frozenset()]
            for a in g.args:
                sub = rec(a)
                if not sub:
                    return []
                if len(acc) * len(sub) > limit:
                    raise FormulaTooLarge("CNF distribution exceeds bound")
                acc = _minimize(
                    c for c in (x | y for x in acc for y in sub) if not _tautology(c)
                )
                if not acc:
                    return []
            return acc
        raise TypeError(f"unexpected node in NNF: {g!r}")

    return rec(simplify(nnf(simplify(f))))


def dnf_to_cnf(cubes: Iterable[frozenset], limit: int = 20000) -> list[Clause]:
    return cnf_clauses(disj(cube_formula(c) for c in cubes), limit)


def clause_conflicts(clause: Clause, base: Formula) -> bool:
    """``clause & base`` is unsatisfiable."""
    return not is_satisfiable(And((clause_formula(clause), base)))


def clause_conflicts_cubes(clause: Clause, cubes: Iterable[frozenset]) -> bool:
    """``clause & (c1 | c2 | ...)`` is unsatisfiable: every cube refutes every literal."""
    for cube in cubes:
        if any((n, not p) not in cube for n, p in clause):
            return False
    return True


# ---------------------------------------------------------------- state sets


def state_cubes(states: Iterable[int], props: list[tuple[str, int]]) -> list[frozenset]:
    """Minterm cubes of ``states`` projected on ``props`` (name, bit), then merged."""
    cubes = {frozenset((n, bool(s >> b & 1)) for n, b in props) for s in states}
    return merge_cubes(cubes)


def merge_cubes(cubes: Iterable[frozenset]) -> list[frozenset]:
    current = set(cubes)
    while True:
        merged: set[frozenset] = set()
        used: set[frozenset] = set()
        by_vars: dict[frozenset, list[frozenset]] = {}
        for c in current:
            by_vars.setdefault(frozenset(n for n, _ in c), []).append(c)
        for group in by_vars.values():
            index = set(group)
            for c in group:
                for lit in c:
                    other = (c - {lit}) | {(lit[0], not lit[1])}
                    if other in index:
                        merged.add(c - {lit})
                        used.add(c)
                        used.add(other)
        if not merged:
            break
        current = (current - used) | merged
    # drop cubes implied by a more general cube
    out: list[frozenset] = []
    for c in sorted(current, key=lambda c: (len(c), sorted(c))):
        if any(k <= c for k in out):
            continue
        out.append(c)
    return out


# ---------------------------------------------------------------- compilation

_COMPILED: dict[tuple[Formula, int], Callable[[int], bool]] = {}


def compile_formula(f: Formula, index: Mapping[str, int]) -> Callable[[int], bool]:
    """Compile a propositional formula into a predicate over bit-packed states."""
    masks: list[int] = []

    def emit(g: Formula) -> str:
        if isinstance(g, Const):
            return "True" if g.value else "False"
        if isinstance(g, Atom):
            try:
                bit = index[g.name]
            except KeyError:
                raise KeyError(f"unknown proposition {g.name!r}") from None
            masks.append(1 << bit)
            return f"(s & m{len(masks) - 1} != 0)"
        if isinstance(g, Not):
            return f"(not {emit(g.arg)})"
        if isinstance(g, And):
            return "(" + " and ".join(emit(a) for a in g.args) + ")"
        if isinstance(g, Or):
            return "(" + " or ".join(emit(a) for a in g.args) + ")"
        if isinstance(g, Implies):
            return f"((not {emit(g.left)}) or {emit(g.right)})"
        raise TypeError(f"not a propositional formula: {g!r}")

    g = simplify(f)
    try:
        body = emit(g)
        env = {f"m{i}": m for i, m in enumerate(masks)}
        return eval(f"lambda s: {body}", env)  # noqa: S307 - generated from our own AST
    except (RecursionError, SyntaxError, MemoryError):
        names = dict(index)
        return lambda s: evaluate(g, lambda n: bool(s >> names[n] & 1))
