"""Vectorized evaluation of DSL trees against a panel.

Semantics (shared with the per-cell reference interpreter used in tests):

* shift/roll act along the date axis per symbol; rolling windows need the
  full `w` observations, partial windows are NaN.
* rolling sums/means/stds accumulate window elements in chronological order
  so results are bit-identical to a per-cell loop.
* division by zero, log of a nonpositive value, and any NaN operand yield
  NaN, never an exception: evaluation is total.
* comparisons and and/or produce {0, 1, NaN}; truthiness is `x != 0`.
* csrank ranks each date's finite values with average ties, normalised by
  (rank - 1) / (m - 1); a lone finite value ranks 0.5; NaNs keep NaN and do
  not shift the ranks of others.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import MissingInputError, PanelTooShortError
from ..panel import OhlcvPanel
from .nodes import (
    Binary, Clip, Const, CsRank, Expr, FieldRef, FillNa, Roll, Shift,
    SignalSpec, Unary, Where,
)


def evaluate(spec: SignalSpec, panel: OhlcvPanel) -> np.ndarray:
    """Evaluate a signal over the full panel; returns a dates x symbols matrix."""
    for f in spec.inputs:
        if f not in panel.fields:
            raise MissingInputError(f"panel lacks input field {f!r}")
    if panel.n_dates < spec.window_length:
        raise PanelTooShortError(
            f"panel has {panel.n_dates} dates, signal needs {spec.window_length}")
    return evaluate_expr(spec.expr, panel)


def evaluate_expr(expr: Expr, panel: OhlcvPanel) -> np.ndarray:
    shape = (panel.n_dates, panel.n_symbols)
    out = _eval(expr, panel, shape)
    return np.array(out, dtype=np.float64, copy=True)


def _eval(e: Expr, panel: OhlcvPanel, shape) -> np.ndarray:
    if isinstance(e, FieldRef):
        try:
            return panel.fields[e.name]
        except KeyError:
            raise MissingInputError(f"panel lacks input field {e.name!r}") from None
    if isinstance(e, Const):
        return np.full(shape, float(e.value))
    if isinstance(e, Unary):
        x = _eval(e.child, panel, shape)
        if e.op == "neg":
            return -x
        if e.op == "abs":
            return np.abs(x)
        if e.op == "log":
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)
        raise AssertionError(e.op)
    if isinstance(e, Binary):
        l = _eval(e.left, panel, shape)
        r = _eval(e.right, panel, shape)
        return _binary(e.op, l, r)
    if isinstance(e, Shift):
        x = _eval(e.child, panel, shape)
        out = np.full(shape, np.nan)
        if e.n < shape[0]:
            out[e.n:] = x[:shape[0] - e.n]
        return out
    if isinstance(e, Roll):
        return _roll(e.op, _eval(e.child, panel, shape), e.window)
    if isinstance(e, Where):
        c = _eval(e.cond, panel, shape)
        a = _eval(e.a, panel, shape)
        b = _eval(e.b, panel, shape)
        out = np.where(c != 0, a, b)
        return np.where(np.isnan(c), np.nan, out)
    if isinstance(e, Clip):
        x = _eval(e.child, panel, shape)
        return np.minimum(np.maximum(x, e.lo), e.hi)
    if isinstance(e, FillNa):
        x = _eval(e.child, panel, shape)
        return np.where(np.isnan(x), float(e.value), x)
    if isinstance(e, CsRank):
        return cs_rank(_eval(e.child, panel, shape))
    raise TypeError(f"not an Expr node: {e!r}")


def _binary(op: str, l: np.ndarray, r: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if op == "add":
            return l + r
        if op == "sub":
            return l - r
        if op == "mul":
            return l * r
        if op == "div":
            out = l / np.where(r == 0, 1.0, r)
            return np.where(r == 0, np.nan, out)
        if op in ("gt", "ge", "lt", "le"):
            cmp = {"gt": np.greater, "ge": np.greater_equal,
                   "lt": np.less, "le": np.less_equal}[op](l, r).astype(np.float64)
            return np.where(np.isnan(l) | np.isnan(r), np.nan, cmp)
        if op in ("and", "or"):
            lt, rt = l != 0, r != 0
            both = (lt & rt) if op == "and" else (lt | rt)
            return np.where(np.isnan(l) | np.isnan(r), np.nan, both.astype(np.float64))
        if op == "max2":
            return np.maximum(l, r)
        if op == "min2":
            return np.minimum(l, r)
    raise AssertionError(op)


def _roll(op: str, x: np.ndarray, w: int) -> np.ndarray:
    D, S = x.shape
    out = np.full((D, S), np.nan)
    if D < w:
        return out
    n = D - w + 1
    if op in ("sum", "mean", "std"):
        acc = np.zeros((n, S))
        for j in range(w):  # chronological order, bit-identical to a scalar loop
            acc = acc + x[j:n + j]
        if op == "sum":
            res = acc
        elif op == "mean":
            res = acc / w
        else:
            if w == 1:
                res = np.full((n, S), np.nan)  # sample std of one point
            else:
                mean = acc / w
                acc2 = np.zeros((n, S))
                for j in range(w):
                    d = x[j:n + j] - mean
                    acc2 = acc2 + d * d
                res = np.sqrt(acc2 / (w - 1))
    else:
        agg = np.maximum if op == "max" else np.minimum
        res = x[0:n].copy()
        for j in range(1, w):
            res = agg(res, x[j:n + j])
    out[w - 1:] = res
    return out


def cs_rank(x: np.ndarray) -> np.ndarray:
    """Rank each date's cross-section into [0, 1] with average-rank ties."""
    out = np.full_like(x, np.nan)
    for t in range(x.shape[0]):
        row = x[t]
        finite = np.isfinite(row)
        m = int(finite.sum())
        if m == 0:
            continue
        if m == 1:
            out[t, finite] = 0.5
            continue
        ranks = rankdata(row[finite], method="average")
        out[t, finite] = (ranks - 1.0) / (m - 1.0)
    return out
