"""signalforge: a self-improving signal-mining toolkit.

Library layers: OHLCV panels and synthetic data, a closed factor-expression
DSL with a vectorized evaluator, cross-sectional evaluation metrics, an
embedding-backed knowledge base, writer/judge refinement loops, and a
tabular-MDP regret laboratory. The `signalforge` CLI ties them into
reproducible runs.
"""

__version__ = "0.1.0"

from . import dsl, kb, loops, metrics, panel, regret, winrate  # noqa: F401
