"""The inner refinement loop and outer feedback loop, with cost accounting.

Inner loop, per iteration and in this exact order: retrieve knowledge for the
writer, extend the context, generate a candidate, retrieve knowledge for the
judge, extend the context with candidate and knowledge, score and review,
extend the context with the review; stop at the first score >= beta or after
max_iters rounds. The context buffer is append-only throughout.

Outer loop: start from an empty knowledge base; per iteration sample an idea,
run the inner loop, evaluate the returned candidate against the full panel
(the judge only ever saw a validation slice), and insert the outcome into the
knowledge base. Failures are recorded, never fatal to remaining iterations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from .agents import (
    CANDIDATE, KNOWLEDGE, PROBLEM, REVIEW, ContextBuffer, count_tokens,
    render_context, render_records,
)
from .dsl import parse
from .errors import (
    BackendFailureError, BackendTimeoutError, DslError, HttpStatusError,
    InsufficientDataError, MalformedCompletionError,
)
from .ideas import IdeaSampler
from .kb import INSERTED, KnowledgeBase, MetricsSummary, insert, make_record, retrieve
from .metrics import EvalReport, PortfolioCfg, evaluate_signal

log = logging.getLogger("signalforge.loops")


@dataclass(frozen=True)
class InnerLoopConfig:
    beta: float = 0.9       # reward threshold
    max_iters: int = 4      # iteration cap T
    k_writer: int = 3
    k_judge: int = 3

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.k_writer < 0 or self.k_judge < 0:
            raise ValueError("retrieval counts must be >= 0")


@dataclass
class InnerIterRecord:
    t: int
    k1_ids: List[str]
    candidate: str
    k2_ids: List[str]
    score: float
    review: str
    tokens_in: int
    tokens_out: int
    tokens_added: int


@dataclass
class InnerTrace:
    problem: str
    records: List[InnerIterRecord] = field(default_factory=list)
    returned_candidate: str = ""
    best_candidate: str = ""
    stop_reason: str = ""     # threshold | exhausted | backend_failure
    error: str = ""
    ctx_tags: List[str] = field(default_factory=list)

    @property
    def final_score(self) -> float:
        return self.records[-1].score if self.records else math.nan

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(asdict(r)) for r in self.records) + "\n"


def inner_loop(problem: str, kb: KnowledgeBase, writer, judge,
               cfg: Optional[InnerLoopConfig] = None) -> InnerTrace:
    cfg = cfg or InnerLoopConfig()
    cfg.validate()
    ctx = ContextBuffer()
    ctx.add(PROBLEM, problem)
    trace = InnerTrace(problem=problem)
    t = 0
    while True:
        tokens_before = ctx.token_count
        try:
            k1 = retrieve(kb, problem, cfg.k_writer)
            ctx.add(KNOWLEDGE, render_records(k1))
            _, writer_tokens = render_context(ctx, [], "writer")
            try:
                candidate = writer.propose(ctx, k1)
            except MalformedCompletionError as exc:
                candidate = ""
                log.warning("writer returned no candidate: %s", exc)
            k2 = retrieve(kb, problem + " " + candidate, cfg.k_judge)
            ctx.add(CANDIDATE, candidate)
            ctx.add(KNOWLEDGE, render_records(k2))
            _, judge_tokens = render_context(ctx, [], "judge")
            if candidate:
                try:
                    score, review = judge.review(candidate, ctx, k2)
                except MalformedCompletionError as exc:
                    score, review = 0.0, f"score=0.000; flags=malformed_completion | {exc}"
            else:
                score, review = 0.0, "score=0.000; flags=no_candidate | writer produced nothing"
            if not 0.0 <= score <= 1.0:
                log.warning("judge score %s outside [0, 1]; clamping", score)
                score = min(1.0, max(0.0, score if not math.isnan(score) else 0.0))
        except (BackendFailureError, BackendTimeoutError, HttpStatusError) as exc:
            trace.stop_reason = "backend_failure"
            trace.error = str(exc)
            trace.ctx_tags = ctx.tags()
            return trace
        t += 1
        ctx.add(REVIEW, review)
        trace.records.append(InnerIterRecord(
            t=t,
            k1_ids=[r.id for r in k1],
            candidate=candidate,
            k2_ids=[r.id for r in k2],
            score=score,
            review=review,
            tokens_in=writer_tokens + judge_tokens,
            tokens_out=count_tokens(candidate) + count_tokens(review),
            tokens_added=ctx.token_count - tokens_before,
        ))
        if score >= cfg.beta:
            trace.stop_reason = "threshold"
            break
        if t >= cfg.max_iters:
            trace.stop_reason = "exhausted"
            break
    trace.returned_candidate = trace.records[-1].candidate
    best = max(range(len(trace.records)), key=lambda i: (trace.records[i].score, -i))
    trace.best_candidate = trace.records[best].candidate
    trace.ctx_tags = ctx.tags()
    return trace


# -- outer loop ----------------------------------------------------------------

@dataclass(frozen=True)
class OuterLoopConfig:
    n_iterations: int = 10          # K
    idea_seed: int = 0
    idea_pool: Optional[Tuple[str, ...]] = None   # None -> bundled pool
    horizon: int = 1
    portfolio: PortfolioCfg = field(default_factory=PortfolioCfg)

    def validate(self):
        if self.n_iterations < 0:
            raise ValueError(f"K must be >= 0, got {self.n_iterations}")


@dataclass
class OuterRecord:
    k: int
    idea: str
    signal_text: str
    score: float
    stop_reason: str
    n_iters: int
    report: Optional[EvalReport]
    insert_status: str
    insert_reason: str

    def to_json_dict(self) -> dict:
        d = {
            "k": self.k, "idea": self.idea, "signal_text": self.signal_text,
            "score": _jnum(self.score), "stop_reason": self.stop_reason,
            "n_iters": self.n_iters,
            "insert_status": self.insert_status, "insert_reason": self.insert_reason,
        }
        if self.report is not None:
            d["report"] = json.loads(self.report.to_json())
        else:
            d["report"] = None
        return d


def _jnum(v: float):
    return None if (isinstance(v, float) and not math.isfinite(v)) else v


def outer_loop(cfg: OuterLoopConfig, inner_cfg: InnerLoopConfig, panel, writer,
               judge, ledger: Optional["CostLedger"] = None
               ) -> Tuple[KnowledgeBase, List[OuterRecord]]:
    """Run K refine-evaluate-update rounds from an empty knowledge base."""
    cfg.validate()
    kb = KnowledgeBase()
    sampler = IdeaSampler(cfg.idea_seed, cfg.idea_pool)
    records: List[OuterRecord] = []
    for k in range(1, cfg.n_iterations + 1):
        idea = sampler.sample()
        trace = inner_loop(idea, kb, writer, judge, inner_cfg)
        if ledger is not None:
            ledger.add_run(k, trace)
        if trace.stop_reason == "backend_failure":
            records.append(OuterRecord(k, idea, "", math.nan, trace.stop_reason,
                                       len(trace.records), None, "skipped", trace.error))
            continue
        candidate = trace.returned_candidate
        report, diag = _real_feedback(candidate, panel, cfg)
        outcome = "accepted" if trace.stop_reason == "threshold" else "rejected"
        if report is not None:
            metrics = MetricsSummary(report.ic_mean, report.sharpe, report.valid_ratio)
        else:
            metrics = MetricsSummary(math.nan, math.nan, math.nan)
        rec = make_record(
            idea=idea, signal_text=candidate,
            score=trace.final_score, review=trace.records[-1].review,
            metrics=metrics, outcome=outcome,
            iteration=(k, len(trace.records)), dim=kb.dim,
        )
        status, reason = insert(kb, rec)
        if status != INSERTED:
            log.info("outer iteration %d: insert -> %s %s", k, status, reason)
        records.append(OuterRecord(
            k=k, idea=idea, signal_text=candidate, score=trace.final_score,
            stop_reason=trace.stop_reason, n_iters=len(trace.records),
            report=report, insert_status=status,
            insert_reason=reason or diag,
        ))
    return kb, records


def _real_feedback(candidate: str, panel, cfg: OuterLoopConfig):
    """Full-panel backtest of the candidate; the high-fidelity environment."""
    try:
        spec = parse(candidate)
    except DslError as exc:
        return None, f"ParseFailure: {exc}"
    try:
        return evaluate_signal(spec, panel, cfg.horizon, cfg.portfolio), ""
    except Exception as exc:  # metric composition failed outright
        return None, f"{type(exc).__name__}: {exc}"


def write_records_jsonl(records: List[OuterRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json_dict()) + "\n")


def read_records_jsonl(path: str) -> List[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# -- cost accounting -------------------------------------------------------------

# time-unit convention: each backend call costs one constant unit and every
# signal/metric evaluation costs one unit
BACKEND_CALL_UNITS = 1
EVAL_UNITS = 1


@dataclass
class CostEntry:
    k: int
    t: int
    tokens_in: int
    tokens_out: int
    tokens_added: int
    time_units: int


@dataclass
class CostLedger:
    entries: List[CostEntry] = field(default_factory=list)

    def add_run(self, k: int, trace: InnerTrace) -> None:
        for r in trace.records:
            self.entries.append(CostEntry(
                k=k, t=r.t, tokens_in=r.tokens_in, tokens_out=r.tokens_out,
                tokens_added=r.tokens_added,
                time_units=2 * BACKEND_CALL_UNITS + EVAL_UNITS,
            ))

    def total_tokens(self) -> int:
        return sum(e.tokens_in + e.tokens_out for e in self.entries)

    def total_time_units(self) -> int:
        return sum(e.time_units for e in self.entries)

    def cumulative_by_iteration(self) -> List[Tuple[int, int]]:
        """(t, cumulative tokens through t) points, pooled across runs."""
        pts = []
        by_k: dict = {}
        for e in self.entries:
            by_k.setdefault(e.k, []).append(e)
        for k, es in sorted(by_k.items()):
            cum = 0
            for e in sorted(es, key=lambda e: e.t):
                cum += e.tokens_in + e.tokens_out
                pts.append((e.t, cum))
        return pts


@dataclass
class CostSummary:
    fit_exponent: float
    mean_tokens_per_iteration: float  # the horizon proxy H
    total_tokens: int
    total_time_units: int
    n_points: int
    predicted_tokens: dict            # (K, T) extrapolations ~ K * H * T^p

    def to_json(self) -> str:
        d = asdict(self)
        if math.isnan(d["fit_exponent"]):
            d["fit_exponent"] = None
        return json.dumps(d, indent=2)


def cost_report(ledger: CostLedger, horizon_proxy: Optional[float] = None,
                extrapolate: Tuple[Tuple[int, int], ...] = ((10, 8),)) -> CostSummary:
    """Fit cumulative tokens ~ t^p by log-log least squares over the pooled
    per-iteration points and extrapolate the K-round cost."""
    if not ledger.entries:
        raise InsufficientDataError("empty ledger")
    pts = ledger.cumulative_by_iteration()
    ts = np.array([p[0] for p in pts], dtype=float)
    cums = np.array([p[1] for p in pts], dtype=float)
    ok = (ts > 0) & (cums > 0)
    if len(set(ts[ok])) < 3:
        raise InsufficientDataError(
            f"need >= 3 distinct iteration depths for the fit, got {len(set(ts[ok]))}")
    slope, _ = np.polyfit(np.log(ts[ok]), np.log(cums[ok]), 1)
    h = (horizon_proxy if horizon_proxy is not None
         else float(np.mean([e.tokens_added for e in ledger.entries])))
    predicted = {f"K={K},T={T}": K * h * (T ** slope) for K, T in extrapolate}
    return CostSummary(
        fit_exponent=float(slope),
        mean_tokens_per_iteration=h,
        total_tokens=ledger.total_tokens(),
        total_time_units=ledger.total_time_units(),
        n_points=len(pts),
        predicted_tokens=predicted,
    )
