"""OHLCV ingestion, calendar alignment, windowing, and trend labels.

Raw per-stock indicator files come in as CSV (UTF-8, ISO-8601 dates, header
``date,open,high,low,close,volume``), either one file per ticker or one long
file with an extra ``ticker`` column. Series are aligned onto a shared
trading calendar, gap-filled, and cut into lookback windows whose next-day
close movement provides the binary label.

Two copies of each window are kept: ``raw`` (the exact panel slice, which
feeds graph generation — energy ratios are meaningless after
standardization) and ``features`` (per-stock per-indicator z-scores, which
feed the model).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    CoverageError,
    DataError,
    EmptyInputError,
    FormatError,
    InsufficientDataError,
)

RELATIONS = ("open", "high", "low", "close", "volume")
CLOSE = RELATIONS.index("close")
VOLUME = RELATIONS.index("volume")

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_REQUIRED = ("date",) + RELATIONS


@dataclass
class InstrumentSeries:
    """One stock's per-date OHLCV records, strictly increasing in date."""

    ticker: str
    dates: list[str]
    values: np.ndarray  # (num_dates, 5) in RELATIONS order
    dropped_rows: int = 0

    def __len__(self) -> int:
        return len(self.dates)


@dataclass
class MarketPanel:
    """Aligned stocks x indicators x trading days array plus its calendar."""

    tickers: list[str]
    calendar: list[str]
    data: np.ndarray  # (num_stocks, 5, num_days)
    fill_counts: dict[str, int] = field(default_factory=dict)

    @property
    def num_stocks(self) -> int:
        return len(self.tickers)

    @property
    def num_days(self) -> int:
        return len(self.calendar)

    def validate(self) -> None:
        n, r, t = self.data.shape
        if n != len(self.tickers) or t != len(self.calendar) or r != len(RELATIONS):
            raise DataError(f"panel shape {self.data.shape} disagrees with tickers/calendar lengths")
        if n < 2:
            raise DataError("panel needs at least 2 stocks")
        if not np.all(np.isfinite(self.data)):
            raise DataError("panel contains non-finite cells")
        if np.any(self.data[:, :VOLUME, :] <= 0.0):
            raise DataError("panel contains non-positive prices")


@dataclass
class WindowSample:
    """One training instance: a lookback window ending at day ``t_index``.

    ``raw`` is the untouched panel slice; ``features`` is its per-(stock,
    indicator) z-scored copy; ``labels[i]`` flags whether stock i's close
    rises on the following trading day.
    """

    t_index: int
    end_date: str
    label_date: str
    features: np.ndarray  # (5, num_stocks, lookback)
    raw: np.ndarray  # (5, num_stocks, lookback)
    labels: np.ndarray  # (num_stocks,) of {0, 1}


# ---------------------------------------------------------------------------
# loading


def _series_from_rows(ticker: str, rows: list[tuple[str, list[float]]], dropped: int) -> InstrumentSeries:
    rows.sort(key=lambda r: r[0])
    dates: list[str] = []
    values: list[list[float]] = []
    for date, vals in rows:
        if dates and date == dates[-1]:
            dropped += 1  # duplicate trading day, keep the first occurrence
            continue
        dates.append(date)
        values.append(vals)
    arr = np.asarray(values, dtype=np.float64).reshape(len(dates), len(RELATIONS))
    return InstrumentSeries(ticker=ticker, dates=dates, values=arr, dropped_rows=dropped)


def _load_one_file(path: Path) -> list[InstrumentSeries]:
    groups: dict[str, list[tuple[str, list[float]]]] = {}
    dropped: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        headers = reader.fieldnames or []
        missing = [c for c in _REQUIRED if c not in headers]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        has_ticker = "ticker" in headers
        for row in reader:
            ticker = (row.get("ticker") or path.stem) if has_ticker else path.stem
            try:
                date = (row["date"] or "").strip()
                if not _DATE_RE.match(date):
                    raise ValueError(date)
                vals = [float(row[c]) for c in RELATIONS]
                if not all(np.isfinite(vals)):
                    raise ValueError("non-finite")
                if any(v <= 0.0 for v in vals[:VOLUME]) or vals[VOLUME] < 0.0:
                    raise ValueError("non-positive price")
            except (KeyError, TypeError, ValueError):
                dropped[ticker] = dropped.get(ticker, 0) + 1
                continue
            groups.setdefault(ticker, []).append((date, vals))
    for ticker in dropped:
        groups.setdefault(ticker, [])
    return [
        _series_from_rows(t, rows, dropped.get(t, 0)) for t, rows in sorted(groups.items())
    ]


def load_csv(path) -> list[InstrumentSeries]:
    """Load instrument series from one CSV file or a directory of them.

    Rows with missing or unparsable fields (including non-positive prices
    and negative volume) are dropped and counted on ``dropped_rows``.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise EmptyInputError(f"{path}: no CSV files found")
        series: list[InstrumentSeries] = []
        for f in files:
            series.extend(_load_one_file(f))
    else:
        if not path.exists():
            raise FormatError(f"{path}: no such file")
        series = _load_one_file(path)
    series = [s for s in series if len(s) > 0]
    if not series:
        raise EmptyInputError(f"{path}: zero valid rows")
    return series


# ---------------------------------------------------------------------------
# alignment


def align_panel(series: list[InstrumentSeries], coverage: float = 0.98) -> MarketPanel:
    """Align series onto a shared calendar and gap-fill the survivors.

    The calendar keeps dates present in at least half the series. A stock
    must be present on at least ``coverage`` of those dates to survive.
    Price gaps are forward-filled (leading gaps back-filled); volume gaps
    are filled with 0, and all volumes are then floored to 1 so signal
    energy stays bounded away from zero.
    """
    if len(series) < 2:
        raise DataError(f"alignment needs at least 2 series, got {len(series)}")
    counts: dict[str, int] = {}
    for s in series:
        for d in s.dates:
            counts[d] = counts.get(d, 0) + 1
    calendar = sorted(d for d, c in counts.items() if 2 * c >= len(series))
    if not calendar:
        raise CoverageError("no date is present in at least half the series")

    presence = {
        s.ticker: len(set(s.dates) & set(calendar)) / len(calendar) for s in series
    }
    kept = [s for s in series if presence[s.ticker] >= coverage]
    if not kept:
        detail = ", ".join(f"{t}={p:.3f}" for t, p in sorted(presence.items()))
        raise CoverageError(f"every stock fell below coverage {coverage}: {detail}")

    n, t_len = len(kept), len(calendar)
    data = np.empty((n, len(RELATIONS), t_len), dtype=np.float64)
    fill_counts: dict[str, int] = {}
    for i, s in enumerate(kept):
        index = {d: j for j, d in enumerate(s.dates)}
        gaps = 0
        last: np.ndarray | None = None
        pending_lead = 0
        for j, d in enumerate(calendar):
            k = index.get(d)
            if k is None:
                gaps += 1
                if last is None:
                    pending_lead += 1  # back-filled once the first value shows up
                else:
                    data[i, :, j] = last
                    data[i, VOLUME, j] = 0.0
                continue
            row = s.values[k]
            if pending_lead:
                data[i, :, j - pending_lead : j] = row[:, None]
                data[i, VOLUME, j - pending_lead : j] = 0.0
                pending_lead = 0
            data[i, :, j] = row
            last = row
        if last is None:
            # kept stocks have presence >= coverage > 0, so this cannot happen
            raise CoverageError(f"{s.ticker}: no observations on the shared calendar")
        fill_counts[s.ticker] = gaps
    data[:, VOLUME, :] = np.maximum(data[:, VOLUME, :], 1.0)
    panel = MarketPanel(
        tickers=[s.ticker for s in kept],
        calendar=calendar,
        data=data,
        fill_counts=fill_counts,
    )
    panel.validate()
    return panel


# ---------------------------------------------------------------------------
# labels and windows


def trend_label(close_t: float, close_next: float) -> int:
    """1 for a strict close-to-close rise, 0 otherwise (ties count as 0)."""
    if close_t <= 0.0 or close_next <= 0.0:
        raise DataError(f"non-positive close price ({close_t!r} -> {close_next!r})")
    return 1 if close_next > close_t else 0


def zscore_window(raw: np.ndarray) -> np.ndarray:
    """Z-score each trailing-axis series; constant series map to zeros."""
    mean = raw.mean(axis=-1, keepdims=True)
    std = raw.std(axis=-1, keepdims=True)
    safe = np.where(std < 1e-12, 1.0, std)
    out = (raw - mean) / safe
    return np.where(std < 1e-12, 0.0, out)


def make_windows(panel: MarketPanel, lookback: int) -> list[WindowSample]:
    """One sample per end-day with a next-day label: count = T - lookback."""
    t_len = panel.num_days
    if lookback < 1:
        raise ConfigError(f"lookback must be positive, got {lookback}")
    if t_len < lookback + 1:
        raise InsufficientDataError(
            f"need at least {lookback + 1} days for lookback {lookback}, have {t_len}"
        )
    samples = []
    close = panel.data[:, CLOSE, :]
    for t in range(lookback - 1, t_len - 1):
        raw = panel.data[:, :, t - lookback + 1 : t + 1].transpose(1, 0, 2).copy()
        labels = np.fromiter(
            (trend_label(close[i, t], close[i, t + 1]) for i in range(panel.num_stocks)),
            dtype=np.int64,
            count=panel.num_stocks,
        )
        samples.append(
            WindowSample(
                t_index=t,
                end_date=panel.calendar[t],
                label_date=panel.calendar[t + 1],
                features=zscore_window(raw),
                raw=raw,
                labels=labels,
            )
        )
    return samples


def label_balance(samples: list[WindowSample]) -> float:
    """Fraction of 1-labels across all (stock, day) pairs."""
    if not samples:
        return float("nan")
    total = sum(s.labels.size for s in samples)
    ones = sum(int(s.labels.sum()) for s in samples)
    return ones / total


DateRange = tuple[str, str]


def _check_range(name: str, rng: DateRange | None) -> None:
    if rng is None:
        return
    start, end = rng
    if not (_DATE_RE.match(start) and _DATE_RE.match(end)):
        raise ConfigError(f"{name} range {rng!r} is not a pair of ISO dates")
    if start > end:
        raise ConfigError(f"{name} range {rng!r} runs backwards")


def split_periods(
    samples: list[WindowSample],
    train_range: DateRange | None,
    val_range: DateRange | None,
    test_range: DateRange | None,
) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    """Assign samples to chronological splits by end-day date.

    A sample belongs to a split only when its end day *and* its label day
    fall inside the range, so no label information leaks across a boundary.
    """
    ranges = [("train", train_range), ("val", val_range), ("test", test_range)]
    for name, rng in ranges:
        _check_range(name, rng)
    given = [(name, rng) for name, rng in ranges if rng is not None]
    for (name_a, a), (name_b, b) in zip(given, given[1:]):
        if a[1] >= b[0]:
            raise ConfigError(
                f"{name_a} range ends {a[1]} but {name_b} starts {b[0]}; ranges must be disjoint and ordered"
            )

    def pick(rng: DateRange | None) -> list[WindowSample]:
        if rng is None:
            return []
        start, end = rng
        return [s for s in samples if start <= s.end_date and s.label_date <= end]

    return pick(train_range), pick(val_range), pick(test_range)


# ---------------------------------------------------------------------------
# panel cache


def write_panel(panel: MarketPanel, directory) -> None:
    """Persist a panel as one CSV per ticker plus a JSON manifest.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, ticker in enumerate(panel.tickers):
        with open(directory / f"{ticker}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(_REQUIRED)
            for j, date in enumerate(panel.calendar):
                writer.writerow([date] + [repr(float(v)) for v in panel.data[i, :, j]])
    manifest = {
        "tickers": panel.tickers,
        "calendar": panel.calendar,
        "fill_counts": panel.fill_counts,
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_panel(directory) -> MarketPanel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: panel manifest not found")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    tickers = manifest["tickers"]
    calendar = manifest["calendar"]
    data = np.empty((len(tickers), len(RELATIONS), len(calendar)), dtype=np.float64)
    for i, ticker in enumerate(tickers):
        path = directory / f"{ticker}.csv"
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != list(_REQUIRED):
                raise FormatError(f"{path}: unexpected header {header!r}")
            for j, row in enumerate(reader):
                if j >= len(calendar) or row[0] != calendar[j]:
                    raise FormatError(f"{path}: dates disagree with the manifest calendar")
                data[i, :, j] = [float(v) for v in row[1:]]
    panel = MarketPanel(
        tickers=list(tickers),
        calendar=list(calendar),
        data=data,
        fill_counts={k: int(v) for k, v in manifest.get("fill_counts", {}).items()},
    )
    panel.validate()
    return panel
