"""Expression tree for the factor DSL.

Nodes are immutable. The tree is closed: no user code, no unbounded loops,
just field references, arithmetic, comparisons, shifts, rolling windows,
conditionals and a cross-sectional rank.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import FrozenSet, Tuple, Union

from ..errors import InputsMismatchError, UnknownFieldError, WindowTooSmallError
from ..panel import REQUIRED_FIELDS

UNARY_OPS = ("abs", "log", "neg")
ARITH_OPS = ("add", "sub", "mul", "div")
CMP_OPS = ("gt", "ge", "lt", "le")
LOGIC_OPS = ("and", "or")
PAIR_FUNCS = ("max2", "min2")
BINARY_OPS = ARITH_OPS + CMP_OPS + LOGIC_OPS + PAIR_FUNCS
ROLL_OPS = ("mean", "std", "max", "min", "sum")

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class FieldRef:
    name: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Shift:
    child: "Expr"
    n: int


@dataclass(frozen=True)
class Roll:
    op: str
    child: "Expr"
    window: int


@dataclass(frozen=True)
class Where:
    cond: "Expr"
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Clip:
    child: "Expr"
    lo: float
    hi: float


@dataclass(frozen=True)
class FillNa:
    child: "Expr"
    value: float


@dataclass(frozen=True)
class CsRank:
    child: "Expr"


Expr = Union[FieldRef, Const, Unary, Binary, Shift, Roll, Where, Clip, FillNa, CsRank]


def free_inputs(expr: Expr) -> FrozenSet[str]:
    """Exactly the set of field names referenced by the tree."""
    out = set()

    def walk(e):
        if isinstance(e, FieldRef):
            out.add(e.name)
        elif isinstance(e, (Unary, Shift, Roll, Clip, FillNa, CsRank)):
            walk(e.child)
        elif isinstance(e, Binary):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Where):
            walk(e.cond)
            walk(e.a)
            walk(e.b)

    walk(expr)
    return frozenset(out)


def required_lookback(expr: Expr) -> int:
    """Rows of history a cell needs: 1 (current row) plus the deepest
    cumulative shift-n / (roll-window - 1) along any root-to-leaf path."""
    return 1 + _depth(expr)


def _depth(e: Expr) -> int:
    if isinstance(e, (FieldRef, Const)):
        return 0
    if isinstance(e, Shift):
        return e.n + _depth(e.child)
    if isinstance(e, Roll):
        return (e.window - 1) + _depth(e.child)
    if isinstance(e, (Unary, Clip, FillNa, CsRank)):
        return _depth(e.child)
    if isinstance(e, Binary):
        return max(_depth(e.left), _depth(e.right))
    if isinstance(e, Where):
        return max(_depth(e.cond), _depth(e.a), _depth(e.b))
    raise TypeError(f"not an Expr node: {e!r}")


_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/",
          "gt": ">", "ge": ">=", "lt": "<", "le": "<=",
          "and": "and", "or": "or"}


def render_expr(e: Expr) -> str:
    """Canonical text: fully parenthesised infix for binary operators,
    function calls for everything else."""
    if isinstance(e, FieldRef):
        return e.name
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{render_expr(e.child)})"
        return f"{e.op}({render_expr(e.child)})"
    if isinstance(e, Binary):
        if e.op in _INFIX:
            return f"({render_expr(e.left)} {_INFIX[e.op]} {render_expr(e.right)})"
        return f"{e.op}({render_expr(e.left)}, {render_expr(e.right)})"
    if isinstance(e, Shift):
        return f"shift({render_expr(e.child)}, {e.n})"
    if isinstance(e, Roll):
        return f"roll_{e.op}({render_expr(e.child)}, {e.window})"
    if isinstance(e, Where):
        return f"where({render_expr(e.cond)}, {render_expr(e.a)}, {render_expr(e.b)})"
    if isinstance(e, Clip):
        return f"clip({render_expr(e.child)}, {repr(float(e.lo))}, {repr(float(e.hi))})"
    if isinstance(e, FillNa):
        return f"fillna({render_expr(e.child)}, {repr(float(e.value))})"
    if isinstance(e, CsRank):
        return f"csrank({render_expr(e.child)})"
    raise TypeError(f"not an Expr node: {e!r}")


@dataclass(frozen=True)
class SignalSpec:
    """A named factor: its expression, declared window and input fields."""
    name: str
    window_length: int
    inputs: Tuple[str, ...]
    expr: Expr
    source_text: str

    def validate(self) -> None:
        if not _NAME_RE.match(self.name):
            raise UnknownFieldError(self.name, "signal name must match [A-Za-z_][A-Za-z0-9_]*")
        used = free_inputs(self.expr)
        for f in used:
            if f not in REQUIRED_FIELDS:
                raise UnknownFieldError(f, "not a base data field")
        if set(self.inputs) != set(used):
            raise InputsMismatchError(self.inputs, used)
        need = required_lookback(self.expr)
        if self.window_length < need:
            raise WindowTooSmallError(self.window_length, need)


def make_spec(name: str, expr: Expr, window_length: int = 0) -> SignalSpec:
    """Build a SignalSpec from a tree; window defaults to the required lookback."""
    need = required_lookback(expr)
    w = window_length if window_length else need
    spec = SignalSpec(
        name=name,
        window_length=w,
        inputs=tuple(sorted(free_inputs(expr))),
        expr=expr,
        source_text="",
    )
    spec = SignalSpec(spec.name, spec.window_length, spec.inputs, spec.expr, render_spec(spec))
    spec.validate()
    return spec


def render_spec(spec: SignalSpec) -> str:
    inputs = ",".join(sorted(spec.inputs)) if spec.inputs else ""
    return (f"signal {spec.name} window {spec.window_length} "
            f"inputs {inputs} := {render_expr(spec.expr)}")
