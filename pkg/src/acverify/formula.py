"""Formula trees shared by policy guards, queries and CTLK properties.

Ground propositions are plain :class:`Atom` nodes carrying the proposition
name (``reviewer(p1,a2)``, ``a1.read.review(p1,a2)``, ``p``).  Policy rule
templates use :class:`PAtom`, whose terms may still be variables; grounding
turns every ``PAtom`` into an ``Atom``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator


class Formula:
    __slots__ = ()

    def __str__(self) -> str:
        from acverify.syntax import format_formula

        return format_formula(self)


@dataclass(frozen=True, slots=True)
class Const(Formula):
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True, slots=True)
class Atom(Formula):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class PAtom(Formula):
    """Atom template ``pred(t1, ..., tn)``; terms are variables or objects."""

    pred: str
    terms: tuple[str, ...]

    def __str__(self) -> str:
        return prop_name(self.pred, self.terms)


@dataclass(frozen=True, slots=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True, slots=True)
class And(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True, slots=True)
class Or(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True, slots=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, slots=True)
class Forall(Formula):
    var: str
    body: Formula


@dataclass(frozen=True, slots=True)
class Exists(Formula):
    var: str
    body: Formula


@dataclass(frozen=True, slots=True)
class K(Formula):
    agent: str
    arg: Formula


UNARY_TEMPORAL = ("EX", "EG", "EF", "AX", "AG", "AF")
BINARY_TEMPORAL = ("EU", "AU", "AR", "ER")


@dataclass(frozen=True, slots=True)
class Temporal(Formula):
    """``EX EG EF AX AG AF`` applied to one operand."""

    op: str
    arg: Formula


@dataclass(frozen=True, slots=True)
class Until(Formula):
    """Binary path operators: ``EU``, ``AU`` (until) and ``AR``, ``ER`` (release)."""

    op: str
    left: Formula
    right: Formula


def prop_name(pred: str, args: Iterable[str]) -> str:
    args = tuple(args)
    if not args:
        return pred
    return f"{pred}({','.join(args)})"


def local_name(agent: str, kind: str, prop: str) -> str:
    """Name of the local copy (``loc``) or read flag (``read``) of ``prop`` for ``agent``."""
    return f"{agent}.{kind}.{prop}"


def conj(args: Iterable[Formula]) -> Formula:
    args = tuple(args)
    if not args:
        return TRUE
    if len(args) == 1:
        return args[0]
    return And(args)


def disj(args: Iterable[Formula]) -> Formula:
    args = tuple(args)
    if not args:
        return FALSE
    if len(args) == 1:
        return args[0]
    return Or(args)


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, (Not, K, Temporal)):
        return (f.arg,)
    if isinstance(f, (And, Or)):
        return f.args
    if isinstance(f, (Implies, Until)):
        return (f.left, f.right)
    if isinstance(f, (Forall, Exists)):
        return (f.body,)
    return ()


def walk(f: Formula) -> Iterator[Formula]:
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def atoms(f: Formula) -> frozenset[str]:
    return frozenset(n.name for n in walk(f) if isinstance(n, Atom))


def is_propositional(f: Formula) -> bool:
    return all(isinstance(n, (Const, Atom, Not, And, Or, Implies)) for n in walk(f))


def agents_of(f: Formula) -> frozenset[str]:
    return frozenset(n.agent for n in walk(f) if isinstance(n, K))


def depth(f: Formula) -> int:
    sub = children(f)
    return 1 + max((depth(c) for c in sub), default=0)
