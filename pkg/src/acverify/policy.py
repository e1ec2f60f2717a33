"""Policy language front end: parsing, grounding and query resolution.

A policy file (``.acp``) is made of sections.  A section starts with a header
line ``name:`` and content may follow the colon on the same line::

    predicates: author/2 reviewer/2 assigned/1
    objects:    p1 p2 a1 a2
    agents:     a1 a2
    define:     AllAssigned := assigned(p1) & assigned(p2)
    defaults:   forall p. ~assigned(p)
    actions:
      assign(x, y, p): {+reviewer(p,y), +assigned(p)} <- ~assigned(p) & ~author(p,y)
    reads:
      seeAssign(x, p, y): reviewer(p,y) <- ~author(p,x)

Action effects are ``+atom`` / ``-atom`` items, optionally prefixed by
``forall v.`` binders.  When two items set the same ground atom, the later
item wins.  The first parameter of every rule ranges over agents, the others
over all objects.  A rule may span several lines while brackets are open or
the line ends with a binary operator.

``defaults`` lists initial-state literals that apply to every atom the query's
initial condition leaves unconstrained.  ``define`` introduces nullary macros.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from acverify.boolean import Literal, simplify
from acverify.formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    Const,
    Exists,
    Forall,
    Formula,
    Implies,
    K,
    Not,
    Or,
    PAtom,
    Temporal,
    Until,
    conj,
    disj,
    is_propositional,
    prop_name,
    walk,
)
from acverify.syntax import ParseError, Parser

DEFAULT_MAX_INSTANCES = 100_000
LOCAL_KINDS = ("loc", "read")


class PolicyError(ValueError):
    """Semantic error in a policy or query (unknown predicate, arity, ...)."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class CapacityError(RuntimeError):
    """A configured size bound was exceeded."""


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    arity: int


@dataclass(frozen=True)
class EffectItem:
    positive: bool
    atom: PAtom
    binders: tuple[str, ...] = ()


@dataclass(frozen=True)
class ActionRule:
    id: str
    params: tuple[str, ...]
    effect: tuple[EffectItem, ...]
    guard: Formula
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ReadRule:
    id: str
    params: tuple[str, ...]
    target: PAtom
    guard: Formula
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Policy:
    """Parsed, ungrounded policy."""

    predicates: tuple[PredicateDecl, ...] = ()
    objects: tuple[str, ...] = ()
    agents: tuple[str, ...] = ()
    actions: tuple[ActionRule, ...] = ()
    reads: tuple[ReadRule, ...] = ()
    defaults: tuple[Formula, ...] = ()
    defines: tuple[tuple[str, Formula], ...] = ()

    @property
    def arity(self) -> dict[str, int]:
        return {p.name: p.arity for p in self.predicates}

    def ground_atoms(self) -> list[str]:
        """Phi_C in canonical order: predicate name, then argument tuple."""
        out = []
        for decl in sorted(self.predicates, key=lambda d: d.name):
            for args in itertools.product(sorted(self.objects), repeat=decl.arity):
                out.append(prop_name(decl.name, args))
        return out


@dataclass(frozen=True)
class GroundAction:
    """``id: effect <- guard`` performed by ``agent``.  Effects are sorted literals."""

    id: str
    agent: str
    effect: tuple[Literal, ...]
    guard: Formula

    @property
    def add(self) -> frozenset[str]:
        return frozenset(n for n, pos in self.effect if pos)

    @property
    def delete(self) -> frozenset[str]:
        return frozenset(n for n, pos in self.effect if not pos)


@dataclass(frozen=True)
class GroundRead:
    id: str
    agent: str
    target: str
    guard: Formula


@dataclass(frozen=True)
class GroundPolicy:
    policy: Policy
    props: tuple[str, ...]
    actions: tuple[GroundAction, ...]
    reads: tuple[GroundRead, ...]
    defaults: Formula
    defines: dict = field(default_factory=dict, compare=False)

    @property
    def agents(self) -> tuple[str, ...]:
        return self.policy.agents

    @property
    def objects(self) -> tuple[str, ...]:
        return self.policy.objects


@dataclass(frozen=True)
class Query:
    init: Formula
    prop: Formula
    visible: tuple[str, ...] = ()
    text: str = field(default="", compare=False)


# ---------------------------------------------------------------- parsing

_SECTIONS = ("predicates", "objects", "agents", "define", "defaults", "actions", "reads")
_HEADER = re.compile(r"^\s*(%s)\s*:(?!=)(.*)$" % "|".join(_SECTIONS))
_CONTINUES = ("&", "|", "->", "<-", ",", ":", ":=")


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _logical_lines(chunks: list[tuple[int, str]]) -> list[tuple[int, str]]:
    """Join physical lines into rules: open brackets or a trailing operator continue."""
    out: list[tuple[int, str]] = []
    buf: list[str] = []
    start = 0
    depth = 0
    for lineno, text in chunks:
        stripped = text.strip()
        if not stripped and not buf:
            continue
        if not buf:
            start = lineno
        buf.append(text)
        depth += text.count("(") + text.count("{") - text.count(")") - text.count("}")
        if depth > 0 or stripped.endswith(_CONTINUES):
            continue
        out.append((start, "\n".join(buf)))
        buf, depth = [], 0
    if buf:
        out.append((start, "\n".join(buf)))
    return out


def parse_policy(source: str) -> Policy:
    """Parse policy text.  Raises :class:`ParseError` or :class:`PolicyError`."""
    sections: dict[str, list[tuple[int, str]]] = {s: [] for s in _SECTIONS}
    current: str | None = None
    seen: set[str] = set()
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = _strip_comment(raw)
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if current in seen:
                raise ParseError(f"duplicate section {current!r}", lineno, 1)
            seen.add(current)
            rest = m.group(2)
            # keep the column of the content after the header
            sections[current].append((lineno, " " * (len(line) - len(rest)) + rest))
            continue
        if not line.strip():
            if current is not None:
                sections[current].append((lineno, ""))
            continue
        if current is None:
            raise ParseError(f"content outside a section: {line.strip()!r}", lineno, 1)
        sections[current].append((lineno, line))

    predicates = _parse_predicates(sections["predicates"])
    objects = _parse_names(sections["objects"], "object")
    agents = _parse_names(sections["agents"], "agent")
    defines = [_parse_define(n, t) for n, t in _logical_lines(sections["define"])]
    defaults = [_parse_template(n, t) for n, t in _logical_lines(sections["defaults"])]
    actions = [_parse_action(n, t) for n, t in _logical_lines(sections["actions"])]
    reads = [_parse_read(n, t) for n, t in _logical_lines(sections["reads"])]
    policy = Policy(
        predicates=tuple(predicates),
        objects=tuple(objects),
        agents=tuple(agents),
        actions=tuple(actions),
        reads=tuple(reads),
        defaults=tuple(defaults),
        defines=tuple(defines),
    )
    validate(policy)
    return policy


def _tokens_of(chunks: list[tuple[int, str]]) -> Parser:
    text = "\n" * (chunks[0][0] - 1) + "\n".join(t for _, t in chunks) if chunks else ""
    return Parser(text)


def _parse_predicates(chunks) -> list[PredicateDecl]:
    if not chunks:
        return []
    p = _tokens_of(chunks)
    out = []
    while p.tok.kind != "EOF":
        name = p.ident("predicate name").text
        p.expect("/")
        out.append(_arity_tail(p, name))
        p.accept(",")
    return out


def _arity_tail(p: Parser, name: str) -> PredicateDecl:
    tok = p.tok
    if tok.kind != "NUM":
        raise p.error(f"expected arity after {name!r}/")
    p.i += 1
    return PredicateDecl(name, int(tok.text))


def _parse_names(chunks, what: str) -> list[str]:
    if not chunks:
        return []
    p = _tokens_of(chunks)
    out = []
    while p.tok.kind != "EOF":
        out.append(p.ident(f"{what} name").text)
        p.accept(",")
    return out


def _parse_template(lineno: int, text: str) -> Formula:
    p = Parser("\n" * (lineno - 1) + text, template=True)
    f = p.formula()
    p.end()
    return f


def _parse_define(lineno: int, text: str) -> tuple[str, Formula]:
    p = Parser("\n" * (lineno - 1) + text, template=True)
    name = p.ident("macro name").text
    p.expect(":=")
    body = p.formula()
    p.end()
    return name, body


def _parse_head(p: Parser) -> tuple[str, tuple[str, ...]]:
    rid = p.ident("rule name").text
    params: list[str] = []
    p.expect("(")
    if not p.at(")"):
        params.append(p.ident("parameter").text)
        while p.accept(","):
            params.append(p.ident("parameter").text)
    p.expect(")")
    p.expect(":")
    if not params:
        raise p.error(f"rule {rid!r} needs at least the agent parameter")
    if len(set(params)) != len(params):
        raise p.error(f"rule {rid!r} repeats a parameter")
    return rid, tuple(params)


def _parse_guard(p: Parser) -> Formula:
    if p.accept("<-"):
        return p.formula()
    return TRUE


def _parse_action(lineno: int, text: str) -> ActionRule:
    p = Parser("\n" * (lineno - 1) + text, template=True)
    rid, params = _parse_head(p)
    p.expect("{")
    items: list[EffectItem] = []
    if not p.at("}"):
        items.append(_parse_effect_item(p))
        while p.accept(","):
            items.append(_parse_effect_item(p))
    p.expect("}")
    guard = _parse_guard(p)
    p.end()
    return ActionRule(rid, params, tuple(items), guard, lineno)


def _parse_effect_item(p: Parser) -> EffectItem:
    binders: list[str] = []
    while p.accept("forall"):
        binders.append(p.ident("variable").text)
        p.expect(".")
    if p.accept("+"):
        positive = True
    elif p.accept("-"):
        positive = False
    else:
        raise p.error("expected '+' or '-' before effect atom")
    atom = p.atom()
    assert isinstance(atom, PAtom)
    return EffectItem(positive, atom, tuple(binders))


def _parse_read(lineno: int, text: str) -> ReadRule:
    p = Parser("\n" * (lineno - 1) + text, template=True)
    rid, params = _parse_head(p)
    target = p.atom()
    assert isinstance(target, PAtom)
    guard = _parse_guard(p)
    p.end()
    return ReadRule(rid, params, target, guard, lineno)


# ---------------------------------------------------------------- validation


def _check_template(f: Formula, bound: set[str], policy: Policy, line: int, macros: set[str]) -> None:
    arity = policy.arity
    objects = set(policy.objects)
    if isinstance(f, PAtom):
        if f.pred in macros and not f.terms:
            return
        if f.pred not in arity:
            raise PolicyError(f"unknown predicate {f.pred!r}", line)
        if arity[f.pred] != len(f.terms):
            raise PolicyError(
                f"{f.pred} expects {arity[f.pred]} arguments, got {len(f.terms)}", line
            )
        for t in f.terms:
            if t not in bound and t not in objects:
                raise PolicyError(f"free variable {t!r} in {f}", line)
        return
    if isinstance(f, (Forall, Exists)):
        if f.var in objects:
            raise PolicyError(f"bound variable {f.var!r} shadows an object", line)
        _check_template(f.body, bound | {f.var}, policy, line, macros)
        return
    if isinstance(f, (K, Temporal, Until)):
        raise PolicyError("modal operators are not allowed in policy formulas", line)
    if isinstance(f, Atom):
        raise PolicyError(f"unexpected ground atom {f.name!r}", line)
    for c in (getattr(f, "args", None) or ()):
        _check_template(c, bound, policy, line, macros)
    for name in ("arg", "left", "right"):
        c = getattr(f, name, None)
        if isinstance(c, Formula):
            _check_template(c, bound, policy, line, macros)


def validate(policy: Policy) -> None:
    names = [d.name for d in policy.predicates]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise PolicyError(f"duplicate predicate {sorted(dup)[0]!r}")
    if len(set(policy.objects)) != len(policy.objects):
        raise PolicyError("duplicate object names")
    unknown = [a for a in policy.agents if a not in policy.objects]
    if unknown:
        raise PolicyError(f"agent {unknown[0]!r} is not a declared object")
    if "e" in policy.agents:
        raise PolicyError("'e' is reserved for the environment")
    macros = {n for n, _ in policy.defines}
    clash = macros & set(names)
    if clash:
        raise PolicyError(f"macro {sorted(clash)[0]!r} clashes with a predicate")
    objects = set(policy.objects)
    for name, body in policy.defines:
        _check_template(body, set(), policy, 0, macros - {name})
    for f in policy.defaults:
        _check_template(f, set(), policy, 0, macros)
    for rule in (*policy.actions, *policy.reads):
        clash = objects & set(rule.params)
        if clash:
            raise PolicyError(f"parameter {sorted(clash)[0]!r} of {rule.id} is an object name", rule.line)
        bound = set(rule.params)
        _check_template(rule.guard, bound, policy, rule.line, macros)
        if isinstance(rule, ActionRule):
            for item in rule.effect:
                _check_template(item.atom, bound | set(item.binders), policy, rule.line, set())
        else:
            _check_template(rule.target, bound, policy, rule.line, set())


# ---------------------------------------------------------------- grounding


def ground_formula(
    f: Formula,
    env: dict[str, str],
    objects: tuple[str, ...],
    macros: dict[str, Formula] | None = None,
) -> Formula:
    """Instantiate variables by ``env``, expand quantifiers over ``objects``."""
    macros = macros or {}
    if isinstance(f, PAtom):
        if not f.terms and f.pred in macros:
            return ground_formula(macros[f.pred], {}, objects, macros)
        return Atom(prop_name(f.pred, (env.get(t, t) for t in f.terms)))
    if isinstance(f, (Const, Atom)):
        return f
    if isinstance(f, Forall):
        return conj(ground_formula(f.body, {**env, f.var: o}, objects, macros) for o in objects)
    if isinstance(f, Exists):
        return disj(ground_formula(f.body, {**env, f.var: o}, objects, macros) for o in objects)
    if isinstance(f, Not):
        return Not(ground_formula(f.arg, env, objects, macros))
    if isinstance(f, And):
        return And(tuple(ground_formula(a, env, objects, macros) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(ground_formula(a, env, objects, macros) for a in f.args))
    if isinstance(f, Implies):
        return Implies(
            ground_formula(f.left, env, objects, macros), ground_formula(f.right, env, objects, macros)
        )
    if isinstance(f, K):
        return K(f.agent, ground_formula(f.arg, env, objects, macros))
    if isinstance(f, Temporal):
        return Temporal(f.op, ground_formula(f.arg, env, objects, macros))
    if isinstance(f, Until):
        return Until(
            f.op, ground_formula(f.left, env, objects, macros), ground_formula(f.right, env, objects, macros)
        )
    raise TypeError(f"cannot ground {f!r}")


def _bindings(params: tuple[str, ...], agents, objects):
    domains = [agents] + [objects] * (len(params) - 1)
    for combo in itertools.product(*domains):
        yield dict(zip(params, combo)), combo


def ground(policy: Policy, max_instances: int = DEFAULT_MAX_INSTANCES) -> GroundPolicy:
    """All ground actions and read permissions of ``policy``."""
    if not policy.agents:
        raise PolicyError("a policy needs at least one agent")
    agents = tuple(policy.agents)
    objects = tuple(policy.objects)
    macros = dict(policy.defines)
    total = sum(len(agents) * len(objects) ** (len(r.params) - 1) for r in (*policy.actions, *policy.reads))
    if total > max_instances:
        raise CapacityError(f"grounding would create {total} instances (limit {max_instances})")

    actions: list[GroundAction] = []
    for rule in policy.actions:
        for env, combo in _bindings(rule.params, agents, objects):
            effect: dict[str, bool] = {}
            for item in rule.effect:
                for vals in itertools.product(objects, repeat=len(item.binders)):
                    local = {**env, **dict(zip(item.binders, vals))}
                    name = prop_name(item.atom.pred, (local.get(t, t) for t in item.atom.terms))
                    effect.pop(name, None)
                    effect[name] = item.positive
            guard = simplify(ground_formula(rule.guard, env, objects, macros))
            actions.append(
                GroundAction(prop_name(rule.id, combo), combo[0], tuple(sorted(effect.items())), guard)
            )
    reads: list[GroundRead] = []
    for rule in policy.reads:
        for env, combo in _bindings(rule.params, agents, objects):
            target = prop_name(rule.target.pred, (env.get(t, t) for t in rule.target.terms))
            guard = simplify(ground_formula(rule.guard, env, objects, macros))
            reads.append(GroundRead(prop_name(rule.id, combo), combo[0], target, guard))
    defaults = simplify(conj(ground_formula(f, {}, objects, macros) for f in policy.defaults))
    ground_macros = {n: simplify(ground_formula(b, {}, objects, macros)) for n, b in macros.items()}
    return GroundPolicy(
        policy=policy,
        props=tuple(policy.ground_atoms()),
        actions=tuple(actions),
        reads=tuple(reads),
        defaults=defaults,
        defines=ground_macros,
    )


# ---------------------------------------------------------------- queries


def split_query(source: str) -> tuple[Formula, Formula, tuple[str, ...]]:
    """Parse query text ``init : property`` plus optional ``visible: names`` lines.

    Returns templates; :func:`parse_query` resolves them against a policy.
    """
    body: list[str] = []
    visible: list[str] = []
    for raw in source.splitlines():
        line = _strip_comment(raw)
        m = re.match(r"^\s*visible\s*:(.*)$", line)
        if m:
            p = Parser(m.group(1), template=True)
            while p.tok.kind != "EOF":
                a = p.atom()
                visible.append(prop_name(a.pred, a.terms))
                p.accept(",")
            body.append("")
            continue
        body.append(line)
    p = Parser("\n".join(body), template=True)
    if p.tok.kind == "EOF":
        raise ParseError("empty query", p.tok.line, p.tok.col)
    init = p.formula()
    p.expect(":")
    prop = p.formula()
    p.end()
    return init, prop, tuple(visible)


def parse_query(source: str, gp: GroundPolicy) -> Query:
    init_t, prop_t, visible = split_query(source)
    known = set(gp.props)
    agents = set(gp.agents)

    def resolve(f: Formula) -> Formula:
        g = ground_formula(f, {}, gp.objects, _template_macros(gp))
        for node in walk(g):
            if isinstance(node, Atom):
                _check_query_atom(node.name, known, agents)
            elif isinstance(node, K) and node.agent not in agents:
                raise PolicyError(f"unknown agent {node.agent!r} in K operator")
        return g

    _check_query_terms(init_t, gp)
    _check_query_terms(prop_t, gp)
    init = resolve(init_t)
    if not is_propositional(init):
        raise PolicyError("the initial condition must be propositional")
    prop = resolve(prop_t)
    for v in visible:
        _check_query_atom(v, known, agents)
    return Query(init, prop, visible, source)


def _template_macros(gp: GroundPolicy) -> dict[str, Formula]:
    return dict(gp.policy.defines)


def _check_query_terms(f: Formula, gp: GroundPolicy, bound: frozenset = frozenset()) -> None:
    objects = set(gp.objects)
    macros = dict(gp.policy.defines)
    if isinstance(f, PAtom):
        if not f.terms and f.pred in macros:
            return
        for t in f.terms:
            if t not in objects and t not in bound:
                raise PolicyError(f"unknown object or free variable {t!r} in {f}")
        return
    if isinstance(f, (Forall, Exists)):
        _check_query_terms(f.body, gp, bound | {f.var})
        return
    for name in ("args",):
        for c in getattr(f, name, ()) or ():
            _check_query_terms(c, gp, bound)
    for name in ("arg", "left", "right"):
        c = getattr(f, name, None)
        if isinstance(c, Formula):
            _check_query_terms(c, gp, bound)


def _check_query_atom(name: str, known: set[str], agents: set[str]) -> None:
    if name in known:
        return
    parts = name.split(".", 2)
    if len(parts) == 3 and parts[0] in agents and parts[1] in LOCAL_KINDS and parts[2] in known:
        return
    raise PolicyError(f"unknown proposition {name!r}")


# ---------------------------------------------------------------- printing


def format_policy(policy: Policy) -> str:
    """Render a policy in the concrete syntax; re-parsing gives an equal AST."""
    from acverify.syntax import format_formula

    lines = ["predicates: " + " ".join(f"{d.name}/{d.arity}" for d in policy.predicates)]
    lines.append("objects: " + " ".join(policy.objects))
    lines.append("agents: " + " ".join(policy.agents))
    if policy.defines:
        lines.append("define:")
        lines += [f"  {n} := {format_formula(b)}" for n, b in policy.defines]
    if policy.defaults:
        lines.append("defaults:")
        lines += [f"  {format_formula(f)}" for f in policy.defaults]
    lines.append("actions:")
    for r in policy.actions:
        eff = ", ".join(
            "".join(f"forall {b}. " for b in it.binders) + ("+" if it.positive else "-") + str(it.atom)
            for it in r.effect
        )
        lines.append(f"  {r.id}({', '.join(r.params)}): {{{eff}}} <- {format_formula(r.guard)}")
    lines.append("reads:")
    for r in policy.reads:
        lines.append(f"  {r.id}({', '.join(r.params)}): {r.target} <- {format_formula(r.guard)}")
    return "\n".join(lines) + "\n"
