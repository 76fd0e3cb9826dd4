"""Bundled trading-idea pool and the seeded idea sampler.

Fifty short natural-language ideas across ten themes. Each idea carries its
theme keyword, which the scripted writer maps to a starting template. Ideas
are sampled with replacement so themes can recur across outer iterations.
"""

from __future__ import annotations

import random
from typing import List, Optional, Sequence

IDEA_POOL: List[str] = [
    # volume
    "unusual volume often precedes a move, buy names with surging volume",
    "rank stocks by abnormal trading volume versus their recent average volume",
    "a quiet tape then a volume spike signals accumulation, follow the volume",
    "heavy volume days carry information, prefer stocks with elevated volume",
    "fade stocks whose volume dried up, chase those with expanding volume",
    # turnover
    "high turnover relative to trend reflects fresh interest in the name",
    "rank the cross-section by turnover acceleration over the last two weeks",
    "rising share turnover signals crowd attention, buy the turnover leaders",
    "stocks with abnormally high turnover tend to keep moving, ride turnover",
    "low turnover names are stale, overweight recent turnover expansion",
    # momentum
    "winners keep winning, buy stocks with strong price momentum",
    "two week momentum persists, rank names by trailing momentum",
    "buy recent strength, trailing returns positive momentum carries on",
    "momentum works, overweight the best performers of the past month",
    "price momentum over ten days predicts the next day, follow momentum",
    # reversal
    "short-term losers bounce, buy the recent reversal candidates",
    "overreaction fades, bet on reversal of last week's worst performers",
    "mean reversion in daily returns, fade the recent winners for a reversal",
    "yesterday's dip is today's entry, play the short-term reversal",
    "extremes revert, rank by negative recent return to catch the reversal",
    # breakout
    "a breakout above the recent high on expanding range is bullish",
    "volatility breakout above the prior high plus average true range",
    "buy range breakout names when the high clears the recent band",
    "breakout strength matters, scale by how far price cleared the threshold",
    "trade the breakout when today's high exceeds yesterday's high by a margin",
    # vwap
    "closing above vwap shows buyer control, rank by close versus vwap",
    "price stretched far from vwap tends to revert, measure the vwap gap",
    "institutional flow anchors to vwap, follow names closing above vwap",
    "vwap premium signals demand, buy stocks settling above their vwap",
    "a close below vwap flags distribution, prefer closes above vwap",
    # range
    "wide daily range means conviction, rank names by relative range",
    "narrow range compresses before expansion, score the range squeeze",
    "range expansion accompanies trends, buy names with growing range",
    "the day's range relative to price levels the field, use relative range",
    "quiet range days precede moves, track the range cycle",
    # liquidity
    "money flows where value trades, rank by traded value liquidity",
    "liquidity attracts liquidity, prefer names with rising traded value",
    "thin value names are fragile, overweight deep liquidity",
    "surging transaction value marks institutional activity and liquidity",
    "rank the universe by log traded value as a liquidity tilt",
    # activity
    "many small trades mark retail activity, rank by trade count",
    "a jump in the number of trades flags fresh activity in the name",
    "rising tradenum with flat price hints at accumulation activity",
    "trade count acceleration precedes volatility, follow the activity",
    "active tapes lead, rank stocks by abnormal trade activity",
    # gap
    "overnight gap up shows demand, buy the gap leaders",
    "gaps fade by the close, trade against the opening gap",
    "a gap above prior close with follow-through is strength, rank the gap",
    "opening gap relative to prior close orders the day's winners",
    "persistent gappers trend, score names by their overnight gap",
]

THEMES = ("volume", "turnover", "momentum", "reversal", "breakout",
          "vwap", "range", "liquidity", "activity", "gap")


def idea_theme(idea: str) -> str:
    """First theme keyword present in the idea text; 'default' when none."""
    text = idea.lower()
    for theme in THEMES:
        if theme in text or (theme == "activity" and "tradenum" in text):
            return theme
    return "default"


class IdeaSampler:
    """Seeded with-replacement sampler over an idea pool."""

    def __init__(self, seed: int, pool: Optional[Sequence[str]] = None):
        self.pool = list(pool) if pool is not None else list(IDEA_POOL)
        if not self.pool:
            raise ValueError("idea pool is empty")
        self._rng = random.Random(seed)

    def sample(self) -> str:
        return self._rng.choice(self.pool)
