"""Writer and judge roles with deterministic scripted backends, plus the
shared append-only context buffer.

The scripted writer starts from a keyword template for the idea (or adopts
the best retrieved signal when one scored well enough) and then applies one
seeded mutation per round to the best-scored prior candidate. The rule judge
scores a weighted rubric: parses, inputs known, valid-ratio, and a preview IC
on a held-out validation slice. Both are pure functions of their inputs and a
seed, so whole runs replay bit-identically.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .dsl import (
    Binary, Const, Roll, Shift, make_spec, parse, parse_expr_text, render_spec,
)
from .dsl.nodes import ARITH_OPS, CMP_OPS, PAIR_FUNCS, Expr
from .errors import DslError, NoUsableDatesError, UnembeddableError
from .ideas import idea_theme
from .kb import KbRecord, cosine, embed
from .metrics import information_coefficient, signal_quality
from .panel import OhlcvPanel, forward_returns

PROBLEM, KNOWLEDGE, CANDIDATE, REVIEW = "problem", "knowledge", "candidate", "review"


def count_tokens(text: str) -> int:
    """Whitespace-word token count; a documented approximation."""
    return len(text.split())


@dataclass
class CtxEntry:
    tag: str
    text: str


class ContextBuffer:
    """Append-only record of the ongoing interaction."""

    def __init__(self):
        self._entries: List[CtxEntry] = []
        self.token_count = 0

    def add(self, tag: str, text: str) -> None:
        self._entries.append(CtxEntry(tag, text))
        self.token_count += count_tokens(text)

    @property
    def entries(self) -> Tuple[CtxEntry, ...]:
        return tuple(self._entries)

    def tags(self) -> List[str]:
        return [e.tag for e in self._entries]

    def first(self, tag: str) -> Optional[str]:
        for e in self._entries:
            if e.tag == tag:
                return e.text
        return None

    def last(self, tag: str) -> Optional[str]:
        for e in reversed(self._entries):
            if e.tag == tag:
                return e.text
        return None


def render_records(records: Sequence[KbRecord]) -> str:
    if not records:
        return "(no relevant knowledge)"
    blocks = []
    for r in records:
        blocks.append(
            f"[record {r.id[:12]}] idea: {r.idea}\n"
            f"  signal: {r.signal_text}\n"
            f"  score: {r.score:.3f}  outcome: {r.outcome}\n"
            f"  review: {r.review}"
        )
    return "\n".join(blocks)


_ROLE_HEADERS = {
    "writer": "You write one trading signal in the signal DSL for the problem below.",
    "judge": "You review the latest candidate signal below and score it.",
}


def render_context(ctx: ContextBuffer, knowledge: Sequence[KbRecord],
                   role: str) -> Tuple[str, int]:
    """Deterministic prompt template: role header, entries in order, then any
    extra knowledge blocks. Returns (text, token estimate)."""
    parts = [_ROLE_HEADERS.get(role, role)]
    for e in ctx.entries:
        parts.append(f"{e.tag}: {e.text}")
    for r in knowledge:
        parts.append("knowledge: " + render_records([r]))
    text = "\n".join(parts)
    return text, count_tokens(text)


# -- scripted writer -------------------------------------------------------------

# keyword -> (template source builder); the table is part of the documented
# writer behaviour, see README
_TEMPLATES = {
    "volume": "log(volume) - roll_mean(log(volume), 5)",
    "turnover": "(turnover / roll_mean(turnover, 10)) - 1",
    "momentum": "(close / shift(close, 10)) - 1",
    "reversal": "-((close / shift(close, 5)) - 1)",
    "breakout": ("where(gt(high, shift(high, 1) + 1.5 * roll_mean(max2(high - low, "
                 "max2(abs(high - shift(pre_close, 1)), abs(low - shift(pre_close, 1)))), 14)), "
                 "(high - shift(high, 1)) / close, 0)"),
    "vwap": "(close - vwap) / vwap",
    "range": "(high - low) / close",
    "liquidity": "csrank(log(value))",
    "activity": "(tradenum / roll_mean(tradenum, 10)) - 1",
    "gap": "(open / pre_close) - 1",
    "default": "csrank(return)",
}

_WINDOW_CHOICES = (5, 10, 14, 20)
_SCORE_RE = re.compile(r"score=([0-9.]+)")


def extract_score(review_text: str) -> float:
    m = _SCORE_RE.search(review_text)
    return float(m.group(1)) if m else math.nan


@dataclass(frozen=True)
class ScriptedWriterCfg:
    seed: int = 0
    operator_pool: Tuple[str, ...] = ("add", "sub", "mul", "div", "max2", "min2")
    mutation_rate: float = 1.0
    knowledge_score_floor: float = 0.9  # adopt retrieved signals scoring at least this
    adopt_sim_floor: float = 0.05       # and whose record is this close to the idea

    def validate(self):
        if not self.operator_pool:
            raise ValueError("operator pool must be nonempty")


class ScriptedWriter:
    def __init__(self, cfg: Optional[ScriptedWriterCfg] = None):
        self.cfg = cfg or ScriptedWriterCfg()
        self.cfg.validate()

    def propose(self, ctx: ContextBuffer, knowledge: Sequence[KbRecord]) -> str:
        problem = ctx.first(PROBLEM) or ""
        prior = _candidate_history(ctx)
        if prior:
            base = _best(prior)
            rng = self._rng(problem, len(prior), base)
            if rng.random() >= self.cfg.mutation_rate:
                return base
            directive = _mutation_directive(ctx.last(REVIEW) or "")
            return self._mutate(base, problem, rng, directive)
        adopted = self._adopt(knowledge, problem)
        if adopted is not None:
            return adopted
        theme = idea_theme(problem)
        expr = _TEMPLATES.get(theme, _TEMPLATES["default"])
        spec = make_spec(f"{theme}_sig", parse_expr_text(expr))
        return render_spec(spec)

    def _adopt(self, knowledge: Sequence[KbRecord], problem: str) -> Optional[str]:
        """Reuse the best retrieved signal as the opening proposal. Only
        records that scored well and sit close to the current idea qualify,
        so knowledge spreads through the idea space gradually; score ties
        break toward the best stored real-environment IC (a ratchet onto the
        strongest signal seen so far)."""
        try:
            q = embed(problem)
        except UnembeddableError:
            return None
        usable = [r for r in knowledge
                  if r.score >= self.cfg.knowledge_score_floor
                  and cosine(q, r.embedding) >= self.cfg.adopt_sim_floor
                  and _parses(r.signal_text)]
        if not usable:
            return None

        def stored_ic(r: KbRecord) -> float:
            v = r.metrics.ic_mean
            return v if not math.isnan(v) else -math.inf
        best = sorted(usable, key=lambda r: (-r.score, -stored_ic(r), r.id))[0]
        return best.signal_text

    def _rng(self, problem: str, n_prior: int, base: str) -> random.Random:
        key = f"{self.cfg.seed}|{problem}|{n_prior}|{base}".encode("utf-8")
        return random.Random(int.from_bytes(
            hashlib.blake2b(key, digest_size=8).digest(), "big"))

    def _mutate(self, base: str, problem: str, rng: random.Random,
                directive: Optional[str]) -> str:
        try:
            spec = parse(base)
        except DslError:
            theme = idea_theme(problem)
            return render_spec(make_spec(
                f"{theme}_sig", parse_expr_text(_TEMPLATES.get(theme, _TEMPLATES["default"]))))
        kinds = [directive] if directive else ["window", "op", "const"]
        if not directive:
            rng.shuffle(kinds)
        for kind in kinds + ["window", "op", "const", "pad"]:
            new_expr = _apply_mutation(spec.expr, kind, rng, self.cfg.operator_pool)
            if new_expr is not None and new_expr != spec.expr:
                return render_spec(make_spec(spec.name, new_expr))
        return base


def _parses(text: str) -> bool:
    try:
        parse(text)
        return True
    except DslError:
        return False


def _candidate_history(ctx: ContextBuffer) -> List[Tuple[str, float]]:
    """(candidate, score) pairs: each candidate paired with the next review."""
    out = []
    pending: Optional[str] = None
    for e in ctx.entries:
        if e.tag == CANDIDATE:
            if pending is not None:
                out.append((pending, math.nan))
            pending = e.text
        elif e.tag == REVIEW and pending is not None:
            out.append((pending, extract_score(e.text)))
            pending = None
    if pending is not None:
        out.append((pending, math.nan))
    return out


def _best(prior: List[Tuple[str, float]]) -> str:
    best_text, best_score = prior[0][0], -math.inf
    for text, score in prior:
        s = score if not math.isnan(score) else -math.inf
        if s > best_score:
            best_text, best_score = text, s
    return best_text


def _mutation_directive(review_text: str) -> Optional[str]:
    flags = ""
    m = re.search(r"flags=([a-z_,]+)", review_text)
    if m:
        flags = m.group(1)
    if "window" in flags:
        return "window"
    if "low_ic" in flags:
        return "op"
    if "low_valid" in flags:
        return "const"
    return None


# tree-mutation helpers: enumerate candidate nodes, rebuild immutably

_OP_GROUPS = (set(ARITH_OPS), set(CMP_OPS), set(PAIR_FUNCS))


def _apply_mutation(expr: Expr, kind: str, rng: random.Random,
                    pool: Tuple[str, ...]) -> Optional[Expr]:
    if kind == "window":
        nodes = _collect(expr, lambda e: isinstance(e, (Roll, Shift)))
        if not nodes:
            return None
        idx = rng.choice(nodes)
        new_w = rng.choice(_WINDOW_CHOICES)

        def repl(e):
            if isinstance(e, Roll):
                return Roll(e.op, e.child, new_w)
            return Shift(e.child, new_w)
        return _rebuild(expr, idx, repl)
    if kind == "op":
        pool_set = set(pool)
        nodes = _collect(expr, lambda e: isinstance(e, Binary) and any(
            e.op in g and len((g & pool_set) - {e.op}) > 0 for g in _OP_GROUPS))
        if not nodes:
            return None
        idx = rng.choice(nodes)

        def repl(e):
            group = next(g for g in _OP_GROUPS if e.op in g)
            options = sorted((group & pool_set) - {e.op})
            return Binary(rng.choice(options), e.left, e.right)
        return _rebuild(expr, idx, repl)
    if kind == "const":
        nodes = _collect(expr, lambda e: isinstance(e, Const))
        if not nodes:
            return None
        idx = rng.choice(nodes)
        factor = rng.choice((0.9, 1.1))

        def repl(e):
            return Const(e.value * factor if e.value != 0 else (factor - 1.0))
        return _rebuild(expr, idx, repl)
    if kind == "pad":
        # last resort: wrap in an identity-like arithmetic node
        return Binary("mul", expr, Const(1.0))
    return None


def _collect(expr: Expr, pred) -> List[int]:
    found = []

    def walk(e, idx):
        if pred(e):
            found.append(idx[0])
        idx[0] += 1
        for c in _children(e):
            walk(c, idx)

    walk(expr, [0])
    return found


def _children(e: Expr):
    if isinstance(e, Binary):
        return (e.left, e.right)
    if hasattr(e, "cond"):
        return (e.cond, e.a, e.b)
    if hasattr(e, "child"):
        return (e.child,)
    return ()


def _rebuild(expr: Expr, target: int, repl) -> Expr:
    counter = [0]

    def walk(e):
        my = counter[0]
        counter[0] += 1
        kids = [walk(c) for c in _children(e)]
        if my == target:
            return repl(e)
        if not kids:
            return e
        if isinstance(e, Binary):
            return Binary(e.op, kids[0], kids[1])
        if hasattr(e, "cond"):
            return type(e)(kids[0], kids[1], kids[2])
        if isinstance(e, Roll):
            return Roll(e.op, kids[0], e.window)
        if isinstance(e, Shift):
            return Shift(kids[0], e.n)
        return _with_child(e, kids[0])

    return walk(expr)


def _with_child(e: Expr, child: Expr) -> Expr:
    from .dsl import Clip, CsRank, FillNa, Unary
    if isinstance(e, Unary):
        return Unary(e.op, child)
    if isinstance(e, Clip):
        return Clip(child, e.lo, e.hi)
    if isinstance(e, FillNa):
        return FillNa(child, e.value)
    if isinstance(e, CsRank):
        return CsRank(child)
    raise TypeError(f"unexpected node {e!r}")


# -- rule judge --------------------------------------------------------------------

@dataclass(frozen=True)
class RuleJudgeCfg:
    validation_panel: OhlcvPanel
    weights: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    tau_valid: float = 0.5
    tau_ic: float = 0.1    # preview IC that saturates the rubric; high enough
    max_window: int = 60   # that cross-sectional noise rarely reaches it
    horizon: int = 1

    def validate(self):
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.weights}")


class RuleJudge:
    """Deterministic rubric judge. The review is a single parseable line:

        score=0.750; parse=ok; inputs=ok; valid_ratio=1.000; ic_preview=0.0123; flags=none
    """

    def __init__(self, cfg: RuleJudgeCfg):
        cfg.validate()
        self.cfg = cfg
        self._fwd = forward_returns(cfg.validation_panel, cfg.horizon)

    def review(self, candidate: str, ctx: ContextBuffer,
               knowledge: Sequence[KbRecord]) -> Tuple[float, str]:
        w1, w2, w3, w4 = self.cfg.weights
        flags = []
        try:
            spec = parse(candidate)
        except DslError as exc:
            return 0.0, (f"score=0.000; parse=failed; inputs=unknown; valid_ratio=0.000; "
                         f"ic_preview=nan; flags=parse_failure | {exc}")

        inputs_ok = set(spec.inputs) <= set(self.cfg.validation_panel.fields)
        if not inputs_ok:
            flags.append("bad_inputs")

        window_ok = (spec.window_length <= self.cfg.max_window
                     and spec.window_length <= self.cfg.validation_panel.n_dates)
        valid_comp = 0.0
        ic_comp = 0.0
        valid_ratio = 0.0
        ic_prev = math.nan
        if not window_ok:
            flags.append("window")
        elif inputs_ok:
            from .dsl import evaluate
            sig = evaluate(spec, self.cfg.validation_panel)
            valid_ratio, _ = signal_quality(sig)
            valid_comp = min(1.0, valid_ratio / self.cfg.tau_valid)
            try:
                _, ic_prev = information_coefficient(sig, self._fwd)
                ic_comp = min(1.0, max(0.0, ic_prev) / self.cfg.tau_ic)
            except NoUsableDatesError:
                ic_prev = math.nan
        if valid_comp < 1.0:
            flags.append("low_valid")
        if ic_comp < 1.0:
            flags.append("low_ic")

        score = w1 * 1.0 + w2 * float(inputs_ok) + w3 * valid_comp + w4 * ic_comp
        score = min(1.0, max(0.0, score))
        ic_txt = "nan" if math.isnan(ic_prev) else f"{ic_prev:.4f}"
        review = (f"score={score:.3f}; parse=ok; inputs={'ok' if inputs_ok else 'unknown_fields'}; "
                  f"valid_ratio={valid_ratio:.3f}; ic_preview={ic_txt}; "
                  f"flags={','.join(flags) if flags else 'none'}")
        return score, review
