"""OHLCV panel container: CSV-per-field IO, synthetic generation, forward returns.

A panel is a set of date x symbol matrices, one per base field. Missing values
are quiet NaN; validity masks are derived, never stored. Panels are immutable
after construction (arrays are marked read-only) and safe for concurrent reads.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    BadParamsError,
    EmptyPanelError,
    HorizonTooLargeError,
    InvariantViolationError,
    MissingFieldError,
    ShapeMismatchError,
)

# Base field set every panel must carry.
REQUIRED_FIELDS = (
    "close", "high", "low", "open", "pre_close", "return",
    "shares", "tradenum", "turnover", "value", "volume", "vwap",
)

_EQ_TOL = 1e-9  # tolerance for derived-field equality checks


@dataclass(frozen=True)
class OhlcvPanel:
    dates: tuple
    symbols: tuple
    fields: Mapping[str, np.ndarray]

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def field(self, name: str) -> np.ndarray:
        try:
            return self.fields[name]
        except KeyError:
            raise MissingFieldError(name, "panel") from None

    def slice_dates(self, start: int, stop: int) -> "OhlcvPanel":
        """Row-slice [start:stop) of every field; symbols unchanged."""
        if not 0 <= start < stop <= self.n_dates:
            raise EmptyPanelError(f"bad date slice [{start}:{stop}) for {self.n_dates} dates")
        fields = {k: _freeze(v[start:stop].copy()) for k, v in self.fields.items()}
        return OhlcvPanel(tuple(self.dates[start:stop]), self.symbols, fields)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def make_panel(dates: Sequence[str], symbols: Sequence[str],
               fields: Mapping[str, np.ndarray], validate: bool = True) -> OhlcvPanel:
    """Assemble and (optionally) validate a panel from raw matrices."""
    dates = tuple(str(d) for d in dates)
    symbols = tuple(str(s) for s in symbols)
    shape = (len(dates), len(symbols))
    frozen = {}
    for name, mat in fields.items():
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != shape:
            raise ShapeMismatchError(f"field {name!r} has shape {mat.shape}, expected {shape}")
        frozen[name] = _freeze(mat.copy())
    panel = OhlcvPanel(dates, symbols, frozen)
    if validate:
        validate_panel(panel)
    return panel


def validate_panel(panel: OhlcvPanel) -> None:
    """Check every OhlcvPanel invariant; raise InvariantViolationError with the
    first offending (field, date, symbol)."""
    for f in REQUIRED_FIELDS:
        if f not in panel.fields:
            raise MissingFieldError(f, "panel")
    shape = (panel.n_dates, panel.n_symbols)
    for name, mat in panel.fields.items():
        if mat.shape != shape:
            raise ShapeMismatchError(f"field {name!r} has shape {mat.shape}, expected {shape}")

    o, h, l, c = (panel.fields[k] for k in ("open", "high", "low", "close"))
    pc, ret, vw = (panel.fields[k] for k in ("pre_close", "return", "vwap"))

    def first_bad(mask, field_name, detail):
        idx = np.argwhere(mask)
        if idx.size:
            t, s = idx[0]
            raise InvariantViolationError(field_name, panel.dates[t], panel.symbols[s], detail)

    with np.errstate(invalid="ignore", divide="ignore"):
        both = np.isfinite(l) & np.isfinite(o) & np.isfinite(c) & np.isfinite(h)
        first_bad(both & (l > np.minimum(o, c)), "low", "low > min(open, close)")
        first_bad(both & (h < np.maximum(o, c)), "high", "high < max(open, close)")

        prev_close = np.full_like(c, np.nan)
        prev_close[1:] = c[:-1]
        m = np.isfinite(pc) & np.isfinite(prev_close)
        m[0, :] = False
        first_bad(m & (np.abs(pc - prev_close) > _EQ_TOL), "pre_close",
                  "pre_close != prior close")

        m = np.isfinite(ret) & np.isfinite(c) & np.isfinite(pc) & (pc != 0)
        first_bad(m & (np.abs(ret - (c / pc - 1.0)) > _EQ_TOL), "return",
                  "return != close/pre_close - 1")

        m = np.isfinite(vw) & np.isfinite(l) & np.isfinite(h)
        first_bad(m & ((vw < l) | (vw > h)), "vwap", "vwap outside [low, high]")


# -- CSV IO --------------------------------------------------------------------

def load_panel(directory: str, date_range: Optional[Sequence[str]] = None) -> OhlcvPanel:
    """Load a panel from one CSV per field (header row = symbols, first column
    = ISO dates, empty cell = NaN). Rows outside date_range are dropped."""
    files = {}
    for fn in sorted(os.listdir(directory)):
        if fn.endswith(".csv"):
            files[fn[:-4]] = os.path.join(directory, fn)
    for f in REQUIRED_FIELDS:
        if f not in files:
            raise MissingFieldError(f, directory)

    dates_ref = None
    symbols_ref = None
    fields = {}
    for name, path in files.items():
        dates, symbols, mat = _read_field_csv(path)
        if dates_ref is None:
            dates_ref, symbols_ref = dates, symbols
        elif dates != dates_ref or symbols != symbols_ref:
            raise ShapeMismatchError(f"{path} disagrees on dates/symbols with other field files")
        fields[name] = mat

    if date_range is not None:
        lo, hi = str(date_range[0]), str(date_range[1])
        keep = [i for i, d in enumerate(dates_ref) if lo <= d <= hi]
        if not keep:
            raise EmptyPanelError(f"date range [{lo}, {hi}] keeps no rows")
        dates_ref = [dates_ref[i] for i in keep]
        fields = {k: v[keep] for k, v in fields.items()}

    return make_panel(dates_ref, symbols_ref, fields)


def _read_field_csv(path: str):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise ShapeMismatchError(f"{path}: no header / no symbols")
    symbols = rows[0][1:]
    dates = []
    data = []
    prev = None
    for r in rows[1:]:
        if len(r) != len(symbols) + 1:
            raise ShapeMismatchError(f"{path}: row for {r[0] if r else '?'} has wrong width")
        if prev is not None and r[0] <= prev:
            raise ShapeMismatchError(f"{path}: dates not strictly increasing at {r[0]}")
        prev = r[0]
        dates.append(r[0])
        data.append([float(x) if x != "" else np.nan for x in r[1:]])
    return dates, symbols, np.asarray(data, dtype=np.float64)


def save_panel(panel: OhlcvPanel, directory: str) -> None:
    """Write one CSV per field; NaN as empty cell, floats via repr (lossless)."""
    os.makedirs(directory, exist_ok=True)
    for name, mat in sorted(panel.fields.items()):
        with open(os.path.join(directory, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", *panel.symbols])
            for t, d in enumerate(panel.dates):
                w.writerow([d, *[_fmt(x) for x in mat[t]]])


# -- synthetic data --------------------------------------------------------------

@dataclass(frozen=True)
class PlantedPattern:
    """A latent cross-sectional factor wired into next-day returns.

    Each date's latent z drives both that date's trading volume (so a
    volume-based transform can rediscover it) and the next day's return
    cross-section with Pearson correlation ~= target_ic.
    """
    target_ic: float = 0.2
    volume_sensitivity: float = 0.75   # log-volume response per unit latent
    volume_level_spread: float = 0.25  # per-symbol log-volume offset std


@dataclass(frozen=True)
class SynthParams:
    drift: float = 0.0
    vol: float = 0.02
    base_price: float = 50.0
    base_volume: float = 1.0e6
    gap_scale: float = 0.3        # overnight gap std as a fraction of vol
    intraday_points: int = 6
    planted: Optional[PlantedPattern] = None


def synth_panel(seed: int, n_dates: int, n_symbols: int,
                params: Optional[SynthParams] = None) -> OhlcvPanel:
    panel, _ = synth_panel_with_latent(seed, n_dates, n_symbols, params)
    return panel


def synth_panel_with_latent(seed: int, n_dates: int, n_symbols: int,
                            params: Optional[SynthParams] = None):
    """Like synth_panel but also returns the generating latent factor matrix
    (all-NaN when no pattern is planted). The latent at date t predicts the
    return from t to t+1."""
    p = params or SynthParams()
    if n_dates < 2 or n_symbols < 2:
        raise BadParamsError(f"need n_dates >= 2 and n_symbols >= 2, got {n_dates}x{n_symbols}")
    if p.vol <= 0:
        raise BadParamsError(f"volatility must be positive, got {p.vol}")
    if p.planted is not None and not -1.0 < p.planted.target_ic < 1.0:
        raise BadParamsError(f"target_ic must be in (-1, 1), got {p.planted.target_ic}")

    rng = np.random.default_rng(seed)
    D, S = n_dates, n_symbols

    z = rng.standard_normal((D, S))
    eps = rng.standard_normal((D, S))
    if p.planted is not None:
        rho = p.planted.target_ic
        # return at date t mixes the latent observed at t-1 with fresh noise
        ret = p.drift + p.vol * (rho * np.vstack([np.zeros((1, S)), z[:-1]])
                                 + math.sqrt(1.0 - rho * rho) * eps)
    else:
        ret = p.drift + p.vol * eps
    ret = np.maximum(ret, -0.95)

    close = np.empty((D, S))
    close[0] = p.base_price * np.exp(0.15 * rng.standard_normal(S))
    for t in range(1, D):
        close[t] = close[t - 1] * (1.0 + ret[t])

    gap = p.gap_scale * p.vol * rng.standard_normal((D, S))
    opn = np.empty((D, S))
    opn[0] = close[0] * (1.0 + gap[0])
    opn[1:] = close[:-1] * (1.0 + gap[1:])
    opn = np.maximum(opn, 1e-6)

    # intraday path: open and close are anchor samples, wiggled interpolants between
    m = max(2, p.intraday_points)
    fracs = np.linspace(0.0, 1.0, m + 2)[1:-1]
    wig = 0.25 * p.vol * rng.standard_normal((m, D, S))
    samples = np.empty((m + 2, D, S))
    samples[0] = opn
    samples[-1] = close
    for j, f in enumerate(fracs):
        samples[j + 1] = np.maximum((opn + (close - opn) * f) * (1.0 + wig[j]), 1e-6)
    high = samples.max(axis=0)
    low = samples.min(axis=0)

    level = np.exp(p.planted.volume_level_spread * rng.standard_normal(S)) \
        if p.planted is not None else np.exp(0.4 * rng.standard_normal(S))
    if p.planted is not None:
        volume = p.base_volume * level * np.exp(p.planted.volume_sensitivity * z)
    else:
        volume = p.base_volume * level * np.exp(0.5 * rng.standard_normal((D, S)))
    volume = np.round(volume)
    volume = np.maximum(volume, 1.0)

    weights = rng.uniform(0.5, 1.5, size=(m + 2, D, S))
    weights /= weights.sum(axis=0)
    value = (samples * weights).sum(axis=0) * volume
    vwap = np.clip(value / volume, low, high)

    shares = np.round(p.base_volume * level * rng.uniform(20.0, 60.0, size=S))
    shares_mat = np.broadcast_to(shares, (D, S)).copy()
    turnover = volume / shares_mat
    tradenum = np.maximum(np.round(volume / rng.uniform(80.0, 120.0, size=(D, S))), 1.0)

    pre_close = np.full((D, S), np.nan)
    pre_close[1:] = close[:-1]
    ret_field = np.full((D, S), np.nan)
    ret_field[1:] = close[1:] / pre_close[1:] - 1.0

    dates = _weekday_dates(D)
    symbols = [f"S{i:03d}" for i in range(S)]
    fields = {
        "close": close, "high": high, "low": low, "open": opn,
        "pre_close": pre_close, "return": ret_field,
        "shares": shares_mat, "tradenum": tradenum, "turnover": turnover,
        "value": value, "volume": volume, "vwap": vwap,
    }
    panel = make_panel(dates, symbols, fields)
    latent = z if p.planted is not None else np.full((D, S), np.nan)
    return panel, latent


def _weekday_dates(n: int) -> list:
    # synthetic calendar: consecutive weekdays from 2023-01-02
    from datetime import date, timedelta
    out = []
    d = date(2023, 1, 2)
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += timedelta(days=1)
    return out


# -- forward returns -------------------------------------------------------------

def forward_returns(panel: OhlcvPanel, horizon: int) -> np.ndarray:
    """fr[t] = close[t+horizon]/close[t] - 1; the last `horizon` rows are NaN."""
    if not 1 <= horizon < panel.n_dates:
        raise HorizonTooLargeError(f"horizon {horizon} not in [1, {panel.n_dates - 1}]")
    c = panel.field("close")
    fr = np.full_like(c, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = c[:-horizon]
        out = c[horizon:] / denom - 1.0
        out[denom == 0] = np.nan
    fr[:-horizon] = out
    return fr
