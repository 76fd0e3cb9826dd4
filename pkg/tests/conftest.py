import numpy as np
import pytest

from signalforge.panel import PlantedPattern, SynthParams, synth_panel, synth_panel_with_latent


@pytest.fixture(scope="session")
def small_panel():
    return synth_panel(3, 40, 6)


@pytest.fixture(scope="session")
def planted_panel():
    panel, latent = synth_panel_with_latent(
        21, 160, 24, SynthParams(planted=PlantedPattern(target_ic=0.25)))
    return panel, latent


def make_constant_tr_panel(n_dates=30, n_symbols=2, breakout_day=None, breakout_high=55.0):
    """A hand-built panel where one symbol has constant true range 2 and a
    prior high of 50 every day; optionally one final breakout day."""
    from signalforge.panel import make_panel

    close = np.full((n_dates, n_symbols), 49.5)
    high = np.full((n_dates, n_symbols), 50.0)
    low = np.full((n_dates, n_symbols), 48.0)
    opn = np.full((n_dates, n_symbols), 49.0)
    if breakout_day is not None:
        high[breakout_day, 0] = breakout_high
        low[breakout_day, 0] = breakout_high - 2.0
        close[breakout_day, 0] = breakout_high - 1.0
        opn[breakout_day, 0] = breakout_high - 1.5
    pre_close = np.full((n_dates, n_symbols), np.nan)
    pre_close[1:] = close[:-1]
    ret = np.full((n_dates, n_symbols), np.nan)
    ret[1:] = close[1:] / pre_close[1:] - 1.0
    vwap = (high + low) / 2.0
    ones = np.ones((n_dates, n_symbols))
    fields = {
        "close": close, "high": high, "low": low, "open": opn,
        "pre_close": pre_close, "return": ret, "shares": ones * 1e6,
        "tradenum": ones * 100, "turnover": ones * 0.01,
        "value": vwap * 1e4, "volume": ones * 1e4, "vwap": vwap,
    }
    dates = [f"2023-02-{d + 1:02d}" if d < 28 else f"2023-03-{d - 27:02d}"
             for d in range(n_dates)]
    symbols = [f"S{i}" for i in range(n_symbols)]
    return make_panel(dates, symbols, fields)
