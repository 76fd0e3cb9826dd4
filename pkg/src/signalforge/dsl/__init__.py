"""Factor-expression DSL: parse, analyse and evaluate trading signals."""

from .nodes import (
    Binary, Clip, Const, CsRank, Expr, FieldRef, FillNa, Roll, Shift,
    SignalSpec, Unary, Where, free_inputs, make_spec, render_expr,
    render_spec, required_lookback,
)
from .parser import parse, parse_expr_text, tokenize
from .evaluate import cs_rank, evaluate, evaluate_expr

__all__ = [
    "Binary", "Clip", "Const", "CsRank", "Expr", "FieldRef", "FillNa",
    "Roll", "Shift", "SignalSpec", "Unary", "Where",
    "free_inputs", "make_spec", "render_expr", "render_spec",
    "required_lookback", "parse", "parse_expr_text", "tokenize",
    "cs_rank", "evaluate", "evaluate_expr",
]
