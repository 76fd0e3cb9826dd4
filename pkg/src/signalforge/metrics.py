"""Signal evaluation: cross-sectional IC, long-short Sharpe, quality ratios.

The information coefficient is the Pearson correlation between a signal's
cross-section and forward returns, computed per date and averaged. Dates with
fewer than MIN_PAIRS valid pairs or zero variance on either side are skipped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from .dsl import SignalSpec, evaluate
from .errors import NoUsableDatesError, ZeroVolatilityError
from .panel import OhlcvPanel, forward_returns

MIN_PAIRS = 3  # minimum valid pairs per cross-section for a Pearson estimate


@dataclass(frozen=True)
class PortfolioCfg:
    quantile: float = 0.2       # long/short fraction of the ranked cross-section
    annualization: float = 252.0

    def validate(self):
        if not 0.0 < self.quantile <= 0.5:
            raise ValueError(f"quantile must be in (0, 0.5], got {self.quantile}")


@dataclass
class EvalReport:
    name: str
    ic_series: List[float]
    ic_mean: float
    icir: float
    sharpe: float
    valid_ratio: float
    unique_ratio: float
    n_dates_used: int
    nan_count: int
    horizon: int
    diagnostics: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(_de_nan(d), indent=2, sort_keys=False)

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        d = json.loads(text)
        d["ic_series"] = [math.nan if v is None else v for v in d["ic_series"]]
        for k in ("ic_mean", "icir", "sharpe", "valid_ratio", "unique_ratio"):
            if d[k] is None:
                d[k] = math.nan
        return EvalReport(**d)


def _de_nan(obj):
    """JSON-safe copy: every non-finite float becomes null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _de_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_de_nan(v) for v in obj]
    return obj


def information_coefficient(signal: np.ndarray, fwd: np.ndarray) -> Tuple[np.ndarray, float]:
    """Per-date Pearson correlation and its mean over usable dates."""
    if signal.shape != fwd.shape:
        raise ValueError(f"shape mismatch {signal.shape} vs {fwd.shape}")
    D = signal.shape[0]
    series = np.full(D, np.nan)
    for t in range(D):
        series[t] = _pearson(signal[t], fwd[t])
    used = np.isfinite(series)
    if not used.any():
        raise NoUsableDatesError("every cross-section was skipped")
    return series, float(series[used].mean())


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    m = np.isfinite(x) & np.isfinite(y)
    if m.sum() < MIN_PAIRS:
        return np.nan
    xv = x[m]
    yv = y[m]
    xd = xv - xv.mean()
    yd = yv - yv.mean()
    sx = float(xd @ xd)
    sy = float(yd @ yd)
    if sx == 0.0 or sy == 0.0:
        return np.nan
    r = float(xd @ yd) / math.sqrt(sx * sy)
    return min(1.0, max(-1.0, r))


def sharpe_ratio(signal: np.ndarray, fwd: np.ndarray,
                 cfg: Optional[PortfolioCfg] = None) -> float:
    """Annualised Sharpe of the equal-weight long-short quantile portfolio."""
    cfg = cfg or PortfolioCfg()
    cfg.validate()
    rp = portfolio_returns(signal, fwd, cfg)
    used = np.isfinite(rp)
    if not used.any():
        raise NoUsableDatesError("no date had enough names for the long-short portfolio")
    r = rp[used]
    sd = float(r.std())  # population std
    if sd == 0.0:
        raise ZeroVolatilityError("long-short return series has zero volatility")
    return float(r.mean()) / sd * math.sqrt(cfg.annualization)


def portfolio_returns(signal: np.ndarray, fwd: np.ndarray, cfg: PortfolioCfg) -> np.ndarray:
    """Daily long-short returns: long the top quantile of the ranked signal,
    short the bottom quantile, equal weight. Unusable dates are NaN."""
    if signal.shape != fwd.shape:
        raise ValueError(f"shape mismatch {signal.shape} vs {fwd.shape}")
    D, S = signal.shape
    rp = np.full(D, np.nan)
    for t in range(D):
        m = np.isfinite(signal[t]) & np.isfinite(fwd[t])
        n = int(m.sum())
        k = int(n * cfg.quantile)
        if k < 1 or 2 * k > n:
            continue
        vals = signal[t][m]
        if np.all(vals == vals[0]):
            continue  # flat cross-section carries no ranking information
        rets = fwd[t][m]
        order = np.lexsort((np.arange(n), vals))  # ascending, index tie-break
        rp[t] = float(rets[order[-k:]].mean()) - float(rets[order[:k]].mean())
    return rp


def signal_quality(signal: np.ndarray) -> Tuple[float, float]:
    """(valid_ratio, unique_ratio). Rows that are entirely NaN (warm-up) are
    excluded from the valid-ratio denominator."""
    finite = np.isfinite(signal)
    rows = finite.any(axis=1)
    if not rows.any():
        return 0.0, 0.0
    valid_ratio = float(finite[rows].sum()) / (int(rows.sum()) * signal.shape[1])
    uniq = []
    for t in np.nonzero(rows)[0]:
        vals = signal[t][finite[t]]
        uniq.append(len(np.unique(vals)) / len(vals))
    return valid_ratio, float(np.mean(uniq))


def evaluate_signal(spec: SignalSpec, panel: OhlcvPanel, horizon: int = 1,
                    cfg: Optional[PortfolioCfg] = None) -> EvalReport:
    """Full-report evaluation: signal matrix, forward returns, all metrics.

    Metric-level failures (no usable dates, zero volatility) are recorded as
    NaN plus a diagnostic instead of aborting.
    """
    cfg = cfg or PortfolioCfg()
    sig = evaluate(spec, panel)
    fwd = forward_returns(panel, horizon)
    diagnostics: List[str] = []

    try:
        series, ic_mean = information_coefficient(sig, fwd)
    except NoUsableDatesError:
        series = np.full(panel.n_dates, np.nan)
        ic_mean = math.nan
        diagnostics.append("NoUsableDates")
    used = np.isfinite(series)
    if used.sum() >= 2 and float(series[used].std()) > 0.0:
        icir = float(series[used].mean()) / float(series[used].std())
    else:
        icir = math.nan

    try:
        sharpe = sharpe_ratio(sig, fwd, cfg)
    except (NoUsableDatesError, ZeroVolatilityError) as exc:
        sharpe = math.nan
        tag = type(exc).__name__.replace("Error", "")
        if tag not in diagnostics:
            diagnostics.append(tag)

    valid_ratio, unique_ratio = signal_quality(sig)
    return EvalReport(
        name=spec.name,
        ic_series=[float(v) for v in series],
        ic_mean=ic_mean,
        icir=icir,
        sharpe=sharpe,
        valid_ratio=valid_ratio,
        unique_ratio=unique_ratio,
        n_dates_used=int(used.sum()),
        nan_count=int(np.isnan(sig).sum()),
        horizon=horizon,
        diagnostics=diagnostics,
    )
