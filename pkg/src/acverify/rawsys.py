"""Hand-written interpreted systems (``.its`` files).

Line-oriented format; ``#`` starts a comment::

    agent e: p q l            # propositions owned by the environment
    agent a: r t              # propositions owned by agent a
    state A = {q, l, r}       # named state: the listed propositions are true
    init: A E                 # initial states by name ...
    init <- p & ~q            # ... or by formula (the two forms combine as a union)
    trans A -> B : alpha11 @ e
    action go @ a : {+t, -r} <- r & ~t

``trans`` declares an action of the given agent enabled exactly in the
source state whose effect turns the source into the target.  Several
``trans`` lines may share a label when they have the same agent and effect;
the guard is then the disjunction of the source states.  A ``trans`` naming
more than one agent is rejected since only one agent acts per step.
"""
from __future__ import annotations

import re
from typing import Iterable

from acverify.boolean import models, simplify
from acverify.formula import TRUE, Atom, Formula, Not, atoms, conj, disj
from acverify.kernel import ENV, Action, InterpretedSystem, Universe
from acverify.policy import GroundAction
from acverify.syntax import ParseError, Parser, format_formula


class RawSystemError(ValueError):
    pass


_AGENT = re.compile(r"^agent\s+([A-Za-z_][A-Za-z0-9_]*)\s*:(.*)$")
_STATE = re.compile(r"^state\s+([A-Za-z_][A-Za-z0-9_]*)\s*=\s*\{(.*)\}\s*$")
_INIT_NAMES = re.compile(r"^init\s*:(.*)$")
_INIT_FORMULA = re.compile(r"^init\s*<-(.*)$")
_TRANS = re.compile(r"^trans\s+(\S+)\s*->\s*(\S+)\s*:\s*(\S+)\s*@\s*(.+)$")
_ACTION = re.compile(r"^action\s+(\S+)\s*@\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*\{(.*)\}\s*(?:<-(.*))?$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*(?:\([A-Za-z0-9_,]*\))?$")


def _names(text: str, lineno: int) -> list[str]:
    out = [t for t in re.split(r"[\s,]+", text.strip()) if t]
    for t in out:
        if not _NAME.match(t):
            raise RawSystemError(f"line {lineno}: bad name {t!r}")
    return out


def encode_raw_system(source: str, name: str = "raw") -> InterpretedSystem:
    owners: dict[str, list[str]] = {}
    states: dict[str, tuple[list[str], int]] = {}
    init_names: list[tuple[str, int]] = []
    init_formulas: list[Formula] = []
    trans: list[tuple[str, str, str, str, int]] = []
    explicit: list[tuple[str, str, str, str | None, int]] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _AGENT.match(line):
            agent = m.group(1)
            if agent in owners:
                raise RawSystemError(f"line {lineno}: agent {agent!r} declared twice")
            owners[agent] = _names(m.group(2), lineno)
        elif m := _STATE.match(line):
            if m.group(1) in states:
                raise RawSystemError(f"line {lineno}: state {m.group(1)!r} declared twice")
            states[m.group(1)] = (_names(m.group(2), lineno), lineno)
        elif m := _INIT_NAMES.match(line):
            init_names += [(n, lineno) for n in _names(m.group(1), lineno)]
        elif m := _INIT_FORMULA.match(line):
            p = Parser(m.group(1), line=lineno)
            init_formulas.append(p.formula())
            p.end()
        elif m := _TRANS.match(line):
            agents = [a for a in re.split(r"[\s,]+", m.group(4).strip()) if a]
            if len(agents) != 1:
                raise RawSystemError(
                    f"line {lineno}: transition {m.group(3)!r} names {len(agents)} agents; "
                    "joint actions must have exactly one acting agent"
                )
            trans.append((m.group(1), m.group(2), m.group(3), agents[0], lineno))
        elif m := _ACTION.match(line):
            explicit.append((m.group(1), m.group(2), m.group(3), m.group(4), lineno))
        else:
            raise RawSystemError(f"line {lineno}: cannot parse {line!r}")

    if ENV not in owners:
        owners = {ENV: [], **owners}
    else:
        owners = {ENV: owners[ENV], **{a: v for a, v in owners.items() if a != ENV}}
    try:
        universe = Universe(owners)
    except ValueError as exc:
        raise RawSystemError(str(exc)) from None

    def state_of(sname: str, lineno: int) -> int:
        if sname not in states:
            raise RawSystemError(f"line {lineno}: unknown state {sname!r}")
        names, _ = states[sname]
        for n in names:
            if n not in universe:
                raise RawSystemError(f"line {lineno}: unknown proposition {n!r} in state {sname}")
        return universe.state(names)

    for sname, (_, ln) in states.items():
        state_of(sname, ln)

    def check_atoms(f: Formula, lineno: int) -> None:
        for n in atoms(f):
            if n not in universe:
                raise RawSystemError(f"line {lineno}: unknown proposition {n!r}")

    init: set[int] = set()
    for sname, ln in init_names:
        init.add(state_of(sname, ln))
    for f in init_formulas:
        check_atoms(f, 0)
        for m in models(f, universe.names):
            init.add(universe.from_valuation(m))

    grouped: dict[str, tuple[str, tuple, list[int], int]] = {}
    order: list[str] = []
    for src, dst, label, agent, ln in trans:
        if agent not in owners:
            raise RawSystemError(f"line {ln}: unknown agent {agent!r}")
        s, t = state_of(src, ln), state_of(dst, ln)
        effect = tuple(
            sorted((n, bool(t >> i & 1)) for n, i in universe.index.items() if (s ^ t) >> i & 1)
        )
        if label in grouped:
            g_agent, g_eff, srcs, _ = grouped[label]
            if g_agent != agent or g_eff != effect:
                raise RawSystemError(f"line {ln}: label {label!r} reused with a different agent or effect")
            srcs.append(s)
        else:
            grouped[label] = (agent, effect, [s], ln)
            order.append(label)

    actions: list[Action] = []
    for label in order:
        agent, effect, srcs, _ = grouped[label]
        guard = disj(minterm(universe, s) for s in srcs)
        actions.append(GroundAction(label, agent, effect, guard))
    for label, agent, eff_text, guard_text, ln in explicit:
        if agent not in owners:
            raise RawSystemError(f"line {ln}: unknown agent {agent!r}")
        if label in grouped or any(a.id == label for a in actions):
            raise RawSystemError(f"line {ln}: action {label!r} declared twice")
        effect = _parse_effect(eff_text, ln)
        for n, _ in effect:
            if n not in universe:
                raise RawSystemError(f"line {ln}: unknown proposition {n!r}")
        if guard_text is None or not guard_text.strip():
            guard = TRUE
        else:
            p = Parser(guard_text, line=ln)
            guard = p.formula()
            p.end()
            check_atoms(guard, ln)
        actions.append(GroundAction(label, agent, effect, guard))
    return InterpretedSystem(universe, actions, init, name=name)


def _split_top(text: str) -> list[str]:
    """Split on commas outside parentheses."""
    items, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            items.append("".join(cur))
            cur = []
            continue
        depth += (ch == "(") - (ch == ")")
        cur.append(ch)
    items.append("".join(cur))
    return [t.strip() for t in items if t.strip()]


def _parse_effect(text: str, lineno: int) -> tuple[tuple[str, bool], ...]:
    out: dict[str, bool] = {}
    for item in _split_top(text):
        if item[0] not in "+-" or not _NAME.match(item[1:].strip()):
            raise RawSystemError(f"line {lineno}: bad effect item {item!r}")
        name = item[1:].strip()
        out.pop(name, None)
        out[name] = item[0] == "+"
    return tuple(sorted(out.items()))


def minterm(universe: Universe, s: int) -> Formula:
    return conj(
        Atom(n) if s >> i & 1 else Not(Atom(n)) for n, i in universe.index.items()
    )


def dump_system(system: InterpretedSystem, reachable: Iterable[int] | None = None) -> str:
    """Render ``system`` as ``.its`` text.

    Initial states become named ``state`` lines; actions become ``action``
    lines.  When ``reachable`` is given, reachable states and their transitions
    are appended as comments for diffing.
    """
    u = system.universe
    lines = []
    for agent, props in u.owner_map().items():
        lines.append(f"agent {agent}: {' '.join(props)}".rstrip())
    init = sorted(system.init)
    for k, s in enumerate(init):
        lines.append(f"state I{k} = {u.format_state(s)}")
    if init:
        lines.append("init: " + " ".join(f"I{k}" for k in range(len(init))))
    for a in system.actions:
        eff = ", ".join(("+" if pos else "-") + n for n, pos in a.effect)
        lines.append(f"action {a.id} @ {a.agent} : {{{eff}}} <- {format_formula(simplify(a.guard))}")
    if reachable is not None:
        reach = sorted(reachable)
        names = {s: f"S{k}" for k, s in enumerate(reach)}
        lines.append(f"# reachable states: {len(reach)}")
        for s in reach:
            lines.append(f"# {names[s]} = {u.format_state(s)}")
        for s in reach:
            for act, t in system.successors(s):
                lines.append(f"# {names[s]} -> {names.get(t, '?')} : {act.id} @ {act.agent}")
    return "\n".join(lines) + "\n"
