"""Knowledge base: (idea, signal, score, review, metrics) records with
deterministic hashed bag-of-tokens embeddings and exhaustive cosine retrieval.

Embeddings are reproducible across processes and platforms (blake2-based
signed hashing, no model service). Retrieval is an exact scan: desk-scale
stores hold at most a few thousand records, so exactness beats indexing.
Readers may run concurrently; writes must be serialised by the caller.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .dsl import parse
from .errors import DslError, UnembeddableError

log = logging.getLogger("signalforge.kb")

SCHEMA_VERSION = "v1"
DEFAULT_DIM = 256

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic signed hashed bag-of-tokens embedding, L2-normalised."""
    tokens = [t for t in _TOKEN_SPLIT.split(text.lower()) if t]
    if not tokens:
        raise UnembeddableError("text has no tokens")
    v = np.zeros(dim)
    for tok in tokens:
        h = int.from_bytes(hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest(), "big")
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        v[h % dim] += sign
    norm = math.sqrt(float(v @ v))
    if norm == 0.0:  # signed counts can cancel exactly
        raise UnembeddableError("token hashes cancelled out")
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b)


@dataclass(frozen=True)
class MetricsSummary:
    ic_mean: float
    sharpe: float
    valid_ratio: float

    def values(self) -> Tuple[float, float, float]:
        return self.ic_mean, self.sharpe, self.valid_ratio


@dataclass(frozen=True)
class KbRecord:
    id: str
    idea: str
    signal_text: str
    score: float
    review: str
    metrics: MetricsSummary
    outcome: str                 # accepted | rejected
    iteration: Tuple[int, int]   # (outer k, inner t)
    embedding: np.ndarray


def record_id(idea: str, signal_text: str) -> str:
    h = hashlib.sha256()
    h.update(idea.encode("utf-8"))
    h.update(b"\x1f")
    h.update(signal_text.encode("utf-8"))
    return h.hexdigest()


def make_record(idea: str, signal_text: str, score: float, review: str,
                metrics: MetricsSummary, outcome: str,
                iteration: Tuple[int, int], dim: int = DEFAULT_DIM) -> KbRecord:
    """Build a record; idea and signal text are embedded jointly so retrieval
    serves both 'similar ideas' and 'similar implementations' queries."""
    return KbRecord(
        id=record_id(idea, signal_text),
        idea=idea,
        signal_text=signal_text,
        score=float(score),
        review=review,
        metrics=metrics,
        outcome=outcome,
        iteration=(int(iteration[0]), int(iteration[1])),
        embedding=embed(idea + " " + signal_text, dim),
    )


@dataclass
class KnowledgeBase:
    dim: int = DEFAULT_DIM
    records: dict = field(default_factory=dict)          # id -> KbRecord
    stats: dict = field(default_factory=lambda: {"inserted": 0, "duplicates": 0, "rejected": 0})
    corrupt_count: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def ordered(self) -> List[KbRecord]:
        """Records ordered by (outer, inner) iteration, then id."""
        return sorted(self.records.values(), key=lambda r: (r.iteration, r.id))


INSERTED, DUPLICATE, REJECTED = "inserted", "duplicate", "rejected"


def insert(kb: KnowledgeBase, record: KbRecord) -> Tuple[str, str]:
    """Sanity-checked insert. Returns (status, reason); status is one of
    inserted/duplicate/rejected. Rejected-outcome records are stored too:
    failures are knowledge, broken records are not."""
    reason = _sanity_reason(kb, record)
    if reason:
        kb.stats["rejected"] += 1
        return REJECTED, reason
    if record.id in kb.records:
        kb.stats["duplicates"] += 1
        return DUPLICATE, ""
    kb.records[record.id] = record
    kb.stats["inserted"] += 1
    return INSERTED, ""


def _sanity_reason(kb: KnowledgeBase, record: KbRecord) -> str:
    try:
        parse(record.signal_text)
    except DslError as exc:
        return f"ParseFailure: {exc}"
    if not 0.0 <= record.score <= 1.0 or math.isnan(record.score):
        return f"ScoreOutOfRange: {record.score}"
    for name, v in zip(("ic_mean", "sharpe", "valid_ratio"), record.metrics.values()):
        if math.isinf(v):
            return f"NonFiniteMetric: {name}"
    if record.outcome not in ("accepted", "rejected"):
        return f"BadOutcome: {record.outcome}"
    if record.embedding.shape != (kb.dim,):
        return f"DimMismatch: {record.embedding.shape}"
    if abs(float(record.embedding @ record.embedding) - 1.0) > 1e-9:
        return "EmbeddingNotUnit"
    if record.id != record_id(record.idea, record.signal_text):
        return "IdMismatch"
    return ""


def retrieve(kb: KnowledgeBase, query: str, k: int,
             diversify: bool = False, mmr_lambda: float = 0.5) -> List[KbRecord]:
    """Top-k records by cosine similarity to the query, ties broken by id.
    An unembeddable query or k=0 returns an empty list."""
    if k <= 0 or not kb.records:
        return []
    try:
        q = embed(query, kb.dim)
    except UnembeddableError as exc:
        log.warning("retrieval query not embeddable, returning nothing: %s", exc)
        return []
    scored = sorted(((cosine(q, r.embedding), r) for r in kb.records.values()),
                    key=lambda sr: (-sr[0], sr[1].id))
    if not diversify:
        return [r for _, r in scored[:k]]
    return _mmr([sr for sr in scored], q, k, mmr_lambda)


def _mmr(scored, q, k, lam) -> List[KbRecord]:
    # maximal marginal relevance: trade query similarity against redundancy
    chosen: List[KbRecord] = []
    pool = list(scored)
    while pool and len(chosen) < k:
        best_i = 0
        best_val = -math.inf
        for i, (sim, r) in enumerate(pool):
            red = max((cosine(r.embedding, c.embedding) for c in chosen), default=0.0)
            val = lam * sim - (1.0 - lam) * red
            if val > best_val + 1e-15:
                best_val = val
                best_i = i
        chosen.append(pool.pop(best_i)[1])
    return chosen


# -- persistence (JSON lines, one record per line) ------------------------------

def persist(kb: KnowledgeBase, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in kb.ordered():
            fh.write(json.dumps({
                "v": SCHEMA_VERSION,
                "id": r.id,
                "idea": r.idea,
                "signal_text": r.signal_text,
                "score": r.score,
                "review": r.review,
                "metrics": {"ic_mean": _num(r.metrics.ic_mean),
                            "sharpe": _num(r.metrics.sharpe),
                            "valid_ratio": _num(r.metrics.valid_ratio)},
                "outcome": r.outcome,
                "iteration": list(r.iteration),
                "embedding": [float(x) for x in r.embedding],
            }) + "\n")


def _num(v: float):
    return None if math.isnan(v) else float(v)


def _or_nan(v) -> float:
    return math.nan if v is None else float(v)


def load(path: str) -> KnowledgeBase:
    """Load a store; corrupt lines are skipped and counted (kb.corrupt_count),
    the rest still load."""
    kb = KnowledgeBase()
    dim_set = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                emb = np.asarray(d["embedding"], dtype=np.float64)
                rec = KbRecord(
                    id=d["id"], idea=d["idea"], signal_text=d["signal_text"],
                    score=float(d["score"]), review=d["review"],
                    metrics=MetricsSummary(_or_nan(d["metrics"]["ic_mean"]),
                                           _or_nan(d["metrics"]["sharpe"]),
                                           _or_nan(d["metrics"]["valid_ratio"])),
                    outcome=d["outcome"], iteration=tuple(d["iteration"]),
                    embedding=emb,
                )
                if not dim_set:
                    kb.dim = emb.shape[0]
                    dim_set = True
                if emb.shape != (kb.dim,):
                    raise ValueError("dim mismatch")
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                log.warning("%s:%d: skipping corrupt record (%s)", path, lineno, exc)
                kb.corrupt_count += 1
                continue
            kb.records[rec.id] = rec
            kb.stats["inserted"] += 1
    return kb
