"""Synthetic OHLCV markets with a planted, learnable trend rule.

The planted rule is momentum: tomorrow's close moves in the direction of
``close[t] - close[t - momentum_lag]``, flipped with probability
``label_noise``. That signal is a fixed zero-sum linear functional of the
raw close window, so it survives per-window z-scoring (the sign of
``v . window`` is invariant under the affine rescaling z-scoring applies),
and the resulting next-day labels follow the rule on exactly the
non-flipped days.

Useful for desk-scale sanity experiments: a working pipeline should push
training accuracy toward (1 - label_noise) and generalize to held-out days
drawn from the same regime.
"""

from __future__ import annotations

import csv
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .market import RELATIONS, InstrumentSeries


def _calendar(num_days: int, start: str = "2020-01-01") -> list[str]:
    first = date.fromisoformat(start)
    return [(first + timedelta(days=i)).isoformat() for i in range(num_days)]


def planted_market(
    num_stocks: int = 12,
    num_days: int = 60,
    momentum_lag: int = 10,
    move: float = 0.02,
    label_noise: float = 0.05,
    seed: int = 0,
) -> list[InstrumentSeries]:
    """Generate per-stock OHLCV series whose next-day trend is momentum-driven.

    Each stock's close follows ``close[t+1] = close[t] * (1 +/- move * u)``
    where the sign is the ``momentum_lag``-day momentum direction (flipped
    with probability ``label_noise``) and ``u`` is a mild positive jitter.
    Opens, highs, lows, and volumes are dressed around the close path.
    """
    rng = np.random.default_rng(seed)
    dates = _calendar(num_days)
    series = []
    for i in range(num_stocks):
        close = np.empty(num_days)
        close[0] = rng.uniform(20.0, 80.0)
        for t in range(num_days - 1):
            if t >= momentum_lag:
                direction = 1.0 if close[t] > close[t - momentum_lag] else -1.0
            else:
                direction = 1.0 if rng.random() < 0.5 else -1.0
            if rng.random() < label_noise:
                direction = -direction
            close[t + 1] = close[t] * (1.0 + direction * move * rng.uniform(0.6, 1.4))
        spread = np.abs(rng.normal(0.0, 0.004, size=num_days)) + 0.001
        open_ = close * (1.0 + rng.normal(0.0, 0.003, size=num_days))
        high = np.maximum(open_, close) * (1.0 + spread)
        low = np.minimum(open_, close) * (1.0 - spread)
        volume = np.round(rng.lognormal(mean=13.0, sigma=0.4, size=num_days))
        values = np.stack([open_, high, low, close, volume], axis=1)
        series.append(
            InstrumentSeries(ticker=f"SYN{i:02d}", dates=list(dates), values=values)
        )
    return series


def write_series_csv(series: list[InstrumentSeries], directory) -> None:
    """One ``<ticker>.csv`` per series, in the ingestion layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in series:
        with open(directory / f"{s.ticker}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(("date",) + RELATIONS)
            for j, d in enumerate(s.dates):
                writer.writerow([d] + [repr(float(v)) for v in s.values[j]])
