"""Pairwise win-rate matrices over candidate groups, and their leaderboard.

Candidates are compared only when they share a trading idea. A comparator
receives an ordered pair (a, b) and returns WIN (a wins), LOSS, or DRAW.
Each unordered pair is compared once and both cells filled from the result,
so w + w^T = 1 holds off-diagonal by construction (draws count 0.5 each way).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

WIN, DRAW, LOSS = 1, 0, -1


@dataclass(frozen=True)
class CandidateRef:
    """What a comparator sees: the idea, the signal text and stored metrics."""
    idea: str
    signal_text: str
    score: float
    ic_mean: float
    sharpe: float


@dataclass
class WinRateMatrix:
    groups: List[str]
    w: np.ndarray   # win rates, NaN where no comparable pairs
    n: np.ndarray   # comparison counts

    def to_csv(self) -> str:
        lines = [",".join(["group", *self.groups])]
        for i, g in enumerate(self.groups):
            cells = ["" if math.isnan(self.w[i, j]) else repr(float(self.w[i, j]))
                     for j in range(len(self.groups))]
            lines.append(",".join([g, *cells]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "groups": self.groups,
            "w": [[None if math.isnan(v) else v for v in row] for row in self.w.tolist()],
            "n": self.n.astype(int).tolist(),
        }, indent=2)


def metric_comparator(attr: str = "ic_mean", tie_eps: float = 1e-12) -> Callable:
    """Higher metric wins; NaN loses to finite; both NaN is a draw."""
    def compare(a: CandidateRef, b: CandidateRef) -> int:
        va, vb = getattr(a, attr), getattr(b, attr)
        na, nb = math.isnan(va), math.isnan(vb)
        if na and nb:
            return DRAW
        if na:
            return LOSS
        if nb:
            return WIN
        if abs(va - vb) <= tie_eps:
            return DRAW
        return WIN if va > vb else LOSS
    return compare


def win_rate_matrix(groups: Sequence[Sequence[CandidateRef]],
                    compare: Callable, labels: Optional[Sequence[str]] = None) -> WinRateMatrix:
    """Compare idea-matched candidate pairs across every group pair."""
    if len(groups) < 1:
        raise ValueError("need at least one group")
    G = len(groups)
    labels = list(labels) if labels is not None else [f"g{i + 1}" for i in range(G)]
    w = np.full((G, G), np.nan)
    n = np.zeros((G, G))
    np.fill_diagonal(w, 0.5)
    for i in range(G):
        for j in range(i + 1, G):
            wins = draws = total = 0
            for a in groups[i]:
                for b in groups[j]:
                    if a.idea != b.idea:
                        continue
                    res = compare(a, b)
                    total += 1
                    if res == WIN:
                        wins += 1
                    elif res == DRAW:
                        draws += 1
            n[i, j] = n[j, i] = total
            if total:
                w[i, j] = (wins + 0.5 * draws) / total
                w[j, i] = ((total - wins - draws) + 0.5 * draws) / total
    return WinRateMatrix(labels, w, n)


def leaderboard(m: WinRateMatrix) -> List[tuple]:
    """Groups ranked by off-diagonal row mean of the win-rate matrix;
    NaN cells excluded; ties broken by label order."""
    G = len(m.groups)
    rows = []
    for i, g in enumerate(m.groups):
        vals = [m.w[i, j] for j in range(G) if j != i and not math.isnan(m.w[i, j])]
        rows.append((g, float(np.mean(vals)) if vals else math.nan))
    order = sorted(range(G), key=lambda i: (-(rows[i][1]) if not math.isnan(rows[i][1])
                                            else math.inf, m.groups[i]))
    return [rows[i] for i in order]


def leaderboard_csv(board: List[tuple]) -> str:
    lines = ["rank,group,mean_win_rate"]
    for r, (g, v) in enumerate(board, start=1):
        lines.append(f"{r},{g}," + ("" if math.isnan(v) else repr(float(v))))
    return "\n".join(lines) + "\n"
