"""Tokenizer, recursive-descent parser and printer for formulas.

Grammar (loosest binding first)::

    formula  := quant | impl
    quant    := ("forall" | "exists") IDENT "." formula
    impl     := disj ["->" formula]             (right associative)
    disj     := conj {"|" conj}
    conj     := unary {"&" unary}
    unary    := "~" unary | TEMP unary | K_<agent> unary | quant | primary
    primary  := "true" | "false" | atom | "(" formula ")"
              | ("A" | "E") "(" formula ("U" | "R") formula ")"
    atom     := NAME ["(" IDENT {"," IDENT} ")"]
    TEMP     := AG | AX | AF | EG | EX | EF

``NAME`` may contain dots, which is how local propositions such as
``a1.read.review(p1,a2)`` are written.  The words ``true false forall exists
A E U R AG AX AF EG EX EF`` and every identifier starting with ``K_`` are
reserved.  ``#`` starts a comment that runs to the end of the line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from acverify.formula import (
    FALSE,
    TRUE,
    UNARY_TEMPORAL,
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
    prop_name,
)

KEYWORDS = frozenset({"true", "false", "forall", "exists", "A", "E", "U", "R", *UNARY_TEMPORAL})


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1, col: int = 1):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, OP or EOF
    text: str
    line: int
    col: int


_SIMPLE_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<op><-|->|:=|[~&|(),.:{}+\-;@/])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<num>[0-9]+)
    """,
    re.VERBOSE,
)
_SIMPLE_RE = re.compile(_SIMPLE_IDENT)


def tokenize(text: str, line: int = 1, col: int = 1) -> list[Token]:
    """Split ``text`` into tokens; ``line``/``col`` give the position of its first char."""
    tokens: list[Token] = []
    pos = 0
    cur_line, line_start = line, -(col - 1)
    while pos < len(text):
        prev = tokens[-1].text if tokens else None
        if prev in ("forall", "exists"):
            # the bound variable is followed by '.', so never absorb dots here
            m_ws = re.compile(r"[ \t]*").match(text, pos)
            start = m_ws.end()
            m = _SIMPLE_RE.match(text, start)
            if m:
                pos = start
                tokens.append(Token("IDENT", m.group(), cur_line, pos - line_start + 1))
                pos = m.end()
                continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", cur_line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        if kind == "ws" or kind == "comment":
            nl = value.count("\n")
            if nl:
                cur_line += nl
                line_start = pos + value.rfind("\n") + 1
        else:
            tok_kind = {"op": "OP", "ident": "IDENT", "num": "NUM"}[kind]
            tokens.append(Token(tok_kind, value, cur_line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("EOF", "", cur_line, pos - line_start + 1))
    return tokens


class Parser:
    """Token-stream parser.  ``template=True`` yields :class:`PAtom` leaves,
    otherwise ground :class:`Atom` leaves named by :func:`prop_name`."""

    def __init__(self, text: str, line: int = 1, col: int = 1, template: bool = False):
        self.tokens = tokenize(text, line, col)
        self.i = 0
        self.template = template

    # -- stream helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("OP", "IDENT") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def ident(self, what: str = "identifier", dotted: bool = False) -> Token:
        tok = self.tok
        if tok.kind != "IDENT" or tok.text in KEYWORDS or tok.text.startswith("K_"):
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}")
        if not dotted and "." in tok.text:
            raise self.error(f"expected {what}, found dotted name {tok.text!r}")
        self.i += 1
        return tok

    def end(self) -> None:
        if self.tok.kind != "EOF":
            raise self.error(f"unexpected {self.tok.text!r}")

    # -- grammar
    def formula(self) -> Formula:
        if self.at("forall") or self.at("exists"):
            return self.quant()
        left = self.disj()
        if self.accept("->"):
            return Implies(left, self.formula())
        return left

    def quant(self) -> Formula:
        kw = self.tok.text
        self.i += 1
        var = self.ident("variable").text
        self.expect(".")
        body = self.formula()
        return Forall(var, body) if kw == "forall" else Exists(var, body)

    def disj(self) -> Formula:
        args = [self.conj()]
        while self.accept("|"):
            args.append(self.conj())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conj(self) -> Formula:
        args = [self.unary()]
        while self.accept("&"):
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self) -> Formula:
        tok = self.tok
        if self.accept("~"):
            return Not(self.unary())
        if tok.kind == "IDENT" and tok.text in UNARY_TEMPORAL:
            self.i += 1
            return Temporal(tok.text, self.unary())
        if tok.kind == "IDENT" and tok.text.startswith("K_"):
            agent = tok.text[2:]
            if not agent or not _SIMPLE_RE.fullmatch(agent):
                raise self.error(f"bad knowledge operator {tok.text!r}")
            self.i += 1
            return K(agent, self.unary())
        if self.at("forall") or self.at("exists"):
            return self.quant()
        return self.primary()

    def primary(self) -> Formula:
        tok = self.tok
        if self.accept("true"):
            return TRUE
        if self.accept("false"):
            return FALSE
        if self.accept("("):
            f = self.formula()
            self.expect(")")
            return f
        if tok.kind == "IDENT" and tok.text in ("A", "E") and self.peek().text == "(":
            self.i += 2
            left = self.formula()
            op_tok = self.tok
            if self.accept("U"):
                kind = "U"
            elif self.accept("R"):
                kind = "R"
            else:
                raise self.error("expected 'U' or 'R'", op_tok)
            right = self.formula()
            self.expect(")")
            return Until(tok.text + kind, left, right)
        return self.atom()

    def atom(self) -> Formula:
        name = self.ident("proposition", dotted=True).text
        terms: list[str] = []
        if self.accept("("):
            terms.append(self.ident("term").text)
            while self.accept(","):
                terms.append(self.ident("term").text)
            self.expect(")")
        if self.template:
            return PAtom(name, tuple(terms))
        return Atom(prop_name(name, terms))


def parse_formula(text: str, template: bool = False) -> Formula:
    p = Parser(text, template=template)
    f = p.formula()
    p.end()
    return f


# ---------------------------------------------------------------- printing

_PREC = {Implies: 1, Or: 2, And: 3}


def _prec(f: Formula) -> int:
    if isinstance(f, (Forall, Exists)):
        return 0
    return _PREC.get(type(f), 4)


def format_formula(f: Formula) -> str:
    """Render ``f`` in the concrete syntax accepted by :func:`parse_formula`."""

    def wrap(g: Formula, min_prec: int) -> str:
        s = fmt(g)
        return f"({s})" if _prec(g) < min_prec else s

    def prefix(op: str, arg: Formula) -> str:
        s = wrap(arg, 4)
        return f"{op}{s}" if s.startswith("(") else f"{op} {s}"

    def fmt(g: Formula) -> str:
        if isinstance(g, Const):
            return "true" if g.value else "false"
        if isinstance(g, Atom):
            return g.name
        if isinstance(g, PAtom):
            return prop_name(g.pred, g.terms)
        if isinstance(g, Not):
            return "~" + wrap(g.arg, 4)
        if isinstance(g, And):
            return " & ".join(wrap(a, 4) for a in g.args)
        if isinstance(g, Or):
            return " | ".join(wrap(a, 3) for a in g.args)
        if isinstance(g, Implies):
            return f"{wrap(g.left, 2)} -> {wrap(g.right, 1)}"
        if isinstance(g, (Forall, Exists)):
            kw = "forall" if isinstance(g, Forall) else "exists"
            return f"{kw} {g.var}. {fmt(g.body)}"
        if isinstance(g, K):
            return prefix(f"K_{g.agent}", g.arg)
        if isinstance(g, Temporal):
            return prefix(g.op, g.arg)
        if isinstance(g, Until):
            return f"{g.op[0]}({fmt(g.left)} {g.op[1]} {fmt(g.right)})"
        raise TypeError(f"cannot format {g!r}")

    return fmt(f)
