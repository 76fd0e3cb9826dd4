"""Tokenizer and recursive-descent parser for the signal DSL.

Header syntax:

    signal <name> window <int> inputs <field>[,<field>]* := <expr>

`#` starts a comment running to end of line. See the README for the full
grammar and operator table.
"""

from __future__ import annotations

import re
from typing import List, NamedTuple, Optional

from ..errors import ArityError, DslSyntaxError
from .nodes import (
    Binary, Clip, Const, CsRank, Expr, FieldRef, FillNa, Roll, Shift,
    SignalSpec, Unary, Where,
)

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|>=|<=|[-+*/(),<>])
""", re.VERBOSE)

KEYWORDS = frozenset({"signal", "window", "inputs", "and", "or"})


class Token(NamedTuple):
    kind: str      # number | name | op | keyword | eof
    text: str
    pos: int


def tokenize(text: str) -> List[Token]:
    out = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise DslSyntaxError(i, {"token"}, text[i])
        i = m.end()
        if m.lastgroup == "ws":
            continue
        kind = m.lastgroup
        val = m.group()
        if kind == "name" and val in KEYWORDS:
            kind = "keyword"
        out.append(Token(kind, val, m.start()))
    out.append(Token("eof", "", len(text)))
    return out


# function name -> (node builder tag, arity)
_FUNCS = {
    "abs": ("unary", 1), "log": ("unary", 1), "neg": ("unary", 1),
    "max2": ("binary", 2), "min2": ("binary", 2),
    "gt": ("binary", 2), "ge": ("binary", 2), "lt": ("binary", 2), "le": ("binary", 2),
    "shift": ("shift", 2),
    "roll_mean": ("roll", 2), "roll_std": ("roll", 2), "roll_sum": ("roll", 2),
    "roll_max": ("roll", 2), "roll_min": ("roll", 2),
    "where": ("where", 3), "clip": ("clip", 3), "fillna": ("fillna", 2),
    "csrank": ("csrank", 1),
}

_CMP = {">": "gt", ">=": "ge", "<": "lt", "<=": "le"}


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.cur
        self.i += 1
        return t

    def fail(self, expected) -> None:
        t = self.cur
        raise DslSyntaxError(t.pos, expected, t.text if t.kind != "eof" else "<eof>")

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.cur
        if t.kind != kind or (text is not None and t.text != text):
            self.fail({text if text is not None else f"<{kind}>"})
        return self.advance()

    # -- header -----------------------------------------------------------

    def parse_signal(self) -> SignalSpec:
        self.expect("keyword", "signal")
        name = self.expect("name").text
        self.expect("keyword", "window")
        window = self._int_literal("window length")
        self.expect("keyword", "inputs")
        inputs = []
        while self.cur.kind == "name":
            inputs.append(self.advance().text)
            if self.cur.kind == "op" and self.cur.text == ",":
                self.advance()
                if self.cur.kind != "name":
                    self.fail({"<field name>"})
        self.expect("op", ":=")
        expr = self.parse_expr()
        if self.cur.kind != "eof":
            self.fail({"<end of signal>"})
        return SignalSpec(name=name, window_length=window,
                          inputs=tuple(sorted(set(inputs))), expr=expr, source_text="")

    def _int_literal(self, what: str) -> int:
        t = self.cur
        if t.kind != "number" or not re.fullmatch(r"\d+", t.text):
            self.fail({f"<{what}: positive integer>"})
        self.advance()
        v = int(t.text)
        if v < 1:
            raise DslSyntaxError(t.pos, {f"<{what}: positive integer>"}, t.text)
        return v

    def _num_literal(self, what: str) -> float:
        neg = False
        if self.cur.kind == "op" and self.cur.text == "-":
            neg = True
            self.advance()
        t = self.cur
        if t.kind != "number":
            self.fail({f"<{what}: number>"})
        self.advance()
        v = float(t.text)
        return -v if neg else v

    # -- expressions (precedence climbing) ----------------------------------

    def parse_expr(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        e = self._and()
        while self.cur.kind == "keyword" and self.cur.text == "or":
            self.advance()
            e = Binary("or", e, self._and())
        return e

    def _and(self) -> Expr:
        e = self._cmp()
        while self.cur.kind == "keyword" and self.cur.text == "and":
            self.advance()
            e = Binary("and", e, self._cmp())
        return e

    def _cmp(self) -> Expr:
        e = self._sum()
        if self.cur.kind == "op" and self.cur.text in _CMP:
            op = _CMP[self.advance().text]
            e = Binary(op, e, self._sum())
        return e

    def _sum(self) -> Expr:
        e = self._term()
        while self.cur.kind == "op" and self.cur.text in ("+", "-"):
            op = "add" if self.advance().text == "+" else "sub"
            e = Binary(op, e, self._term())
        return e

    def _term(self) -> Expr:
        e = self._unary()
        while self.cur.kind == "op" and self.cur.text in ("*", "/"):
            op = "mul" if self.advance().text == "*" else "div"
            e = Binary(op, e, self._unary())
        return e

    def _unary(self) -> Expr:
        if self.cur.kind == "op" and self.cur.text == "-":
            self.advance()
            child = self._unary()
            if isinstance(child, Const):
                return Const(-child.value)  # fold literal negation
            return Unary("neg", child)
        return self._atom()

    def _atom(self) -> Expr:
        t = self.cur
        if t.kind == "number":
            self.advance()
            return Const(float(t.text))
        if t.kind == "op" and t.text == "(":
            self.advance()
            e = self.parse_expr()
            self.expect("op", ")")
            return e
        if t.kind == "name":
            self.advance()
            if self.cur.kind == "op" and self.cur.text == "(":
                return self._call(t)
            return FieldRef(t.text)
        self.fail({"<number>", "<field>", "<function>", "("})

    def _call(self, name_tok: Token) -> Expr:
        fname = name_tok.text
        if fname not in _FUNCS:
            raise DslSyntaxError(name_tok.pos, set(sorted(_FUNCS)), fname)
        tag, arity = _FUNCS[fname]
        self.expect("op", "(")
        if tag == "unary":
            args = self._args(fname, 1, name_tok.pos, kinds=("expr",))
            return Unary(fname, args[0]) if fname != "neg" else Unary("neg", args[0])
        if tag == "binary":
            a, b = self._args(fname, 2, name_tok.pos, kinds=("expr", "expr"))
            return Binary(fname, a, b)
        if tag == "shift":
            args = self._args(fname, 2, name_tok.pos, kinds=("expr", "int"))
            return Shift(args[0], args[1])
        if tag == "roll":
            args = self._args(fname, 2, name_tok.pos, kinds=("expr", "int"))
            return Roll(fname[len("roll_"):], args[0], args[1])
        if tag == "where":
            c, a, b = self._args(fname, 3, name_tok.pos, kinds=("expr",) * 3)
            return Where(c, a, b)
        if tag == "clip":
            args = self._args(fname, 3, name_tok.pos, kinds=("expr", "num", "num"))
            if args[1] > args[2]:
                raise DslSyntaxError(name_tok.pos, {"<clip lo <= hi>"},
                                     f"clip({args[1]}, {args[2]})")
            return Clip(args[0], args[1], args[2])
        if tag == "fillna":
            args = self._args(fname, 2, name_tok.pos, kinds=("expr", "num"))
            return FillNa(args[0], args[1])
        if tag == "csrank":
            args = self._args(fname, 1, name_tok.pos, kinds=("expr",))
            return CsRank(args[0])
        raise AssertionError(fname)

    def _args(self, fname: str, arity: int, call_pos: int, kinds) -> list:
        out = []
        for j in range(arity):
            if j:
                if not (self.cur.kind == "op" and self.cur.text == ","):
                    if self.cur.kind == "op" and self.cur.text == ")":
                        raise ArityError(fname, arity, j, call_pos)
                    self.fail({","})
                self.advance()
            k = kinds[j]
            if k == "expr":
                out.append(self.parse_expr())
            elif k == "int":
                out.append(self._int_literal(f"{fname} argument {j + 1}"))
            else:
                out.append(self._num_literal(f"{fname} argument {j + 1}"))
        if self.cur.kind == "op" and self.cur.text == ",":
            # count the extras for a precise arity report
            extra = 0
            while self.cur.kind == "op" and self.cur.text == ",":
                self.advance()
                self.parse_expr()
                extra += 1
            raise ArityError(fname, arity, arity + extra, call_pos)
        self.expect("op", ")")
        return out


def parse(text: str) -> SignalSpec:
    """Parse signal text into a validated SignalSpec."""
    spec = _Parser(tokenize(text)).parse_signal()
    spec = SignalSpec(spec.name, spec.window_length, spec.inputs, spec.expr, text)
    spec.validate()
    return spec


def parse_expr_text(text: str) -> Expr:
    """Parse a bare expression (no header). Used by tooling and tests."""
    p = _Parser(tokenize(text))
    e = p.parse_expr()
    if p.cur.kind != "eof":
        p.fail({"<end of expression>"})
    return e
