"""Per-day directed stock graphs from signal energy and information entropy.

For each trading day and each indicator, every ordered stock pair (i, j)
gets the edge weight

    energy(x_i) / energy(x_j) * exp(entropy(x_i) - entropy(x_j))

computed on the raw lookback windows. The construction is a complete graph:
no sparsification is applied here — pruning task-irrelevant edges is the
diffusion stage's job. Weights are reciprocal in pairs (w_ij * w_ji = 1)
with an exactly-unit diagonal, and a row-normalized variant is provided for
numerically better-conditioned model input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DayRangeError, DegenerateSeriesError, FormatError, UsageError
from .market import RELATIONS, MarketPanel

ENERGY_FLOOR = 1e-12
ENTROPY_DECIMALS = 9


@dataclass
class MultiRelAdjacency:
    """Stack of per-relation directed weighted adjacency matrices for one day."""

    t_index: int
    matrices: np.ndarray  # (num_relations, num_stocks, num_stocks), strictly positive

    @property
    def num_stocks(self) -> int:
        return self.matrices.shape[-1]


def signal_energy(x) -> float:
    """Sum of squared magnitudes of a window."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise UsageError("signal_energy: empty sequence")
    return float(np.sum(x * x))


def information_entropy(x, decimals: int = ENTROPY_DECIMALS) -> float:
    """Shannon entropy of the window's empirical value distribution.

    Values are quantized to ``decimals`` places before counting repeats;
    without that, real price data almost never repeats and the entropy
    saturates. The result is clamped to the theoretical range [0, ln n]
    (summation can otherwise overshoot the upper bound by an ulp).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise UsageError("information_entropy: empty sequence")
    quantized = np.round(x, decimals)
    _, counts = np.unique(quantized, return_counts=True)
    n = x.size
    h = 0.0
    for c in counts:
        p = c / n
        h -= p * math.log(p)
    return min(max(h, 0.0), math.log(n))


def build_adjacency(window: np.ndarray, tickers: list[str] | None = None) -> np.ndarray:
    """Dense positive edge-weight matrix for one relation's (N, lookback) window.

    Entry (i, j) weights the directed edge from stock i to stock j. The
    formula makes the diagonal exactly 1 and opposite edges exact
    reciprocals up to float rounding.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise UsageError(f"build_adjacency: expected (stocks, lookback), got {window.shape}")
    energy = np.array([signal_energy(row) for row in window])
    weak = energy < ENERGY_FLOOR
    if weak.any():
        i = int(np.argmax(weak))
        name = tickers[i] if tickers else f"stock {i}"
        raise DegenerateSeriesError(
            f"{name}: window energy {energy[i]:.3e} below floor {ENERGY_FLOOR:.0e}"
        )
    entropy = np.array([information_entropy(row) for row in window])
    return (energy[:, None] / energy[None, :]) * np.exp(entropy[:, None] - entropy[None, :])


def build_day_graphs(panel: MarketPanel, t: int, lookback: int) -> MultiRelAdjacency:
    """Adjacency stack for the window ending at calendar index ``t``."""
    if t < lookback - 1 or t >= panel.num_days:
        raise DayRangeError(
            f"end day {t} outside [{lookback - 1}, {panel.num_days - 1}] for lookback {lookback}"
        )
    n = panel.num_stocks
    matrices = np.empty((len(RELATIONS), n, n), dtype=np.float64)
    for r in range(len(RELATIONS)):
        window = panel.data[:, r, t - lookback + 1 : t + 1]
        matrices[r] = build_adjacency(window, panel.tickers)
    return MultiRelAdjacency(t_index=t, matrices=matrices)


def row_normalize_for_model(adjacency: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; entries span orders of magnitude otherwise."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    return adjacency / adjacency.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# graph cache


def _graph_filename(t: int, relation: str) -> str:
    return f"day{t:05d}_{relation}.csv"


def write_graphs(graphs: list[MultiRelAdjacency], directory) -> None:
    """One edge-list CSV per (day, relation), raw and row-normalized forms.

    Weights are written with ``repr`` (shortest round-trip form, up to 17
    significant digits) so reloading is bit-exact.
    """
    directory = Path(directory)
    for form in ("raw", "normalized"):
        (directory / form).mkdir(parents=True, exist_ok=True)
    for adj in graphs:
        for r, relation in enumerate(RELATIONS):
            for form, matrix in (
                ("raw", adj.matrices[r]),
                ("normalized", row_normalize_for_model(adj.matrices[r])),
            ):
                path = directory / form / _graph_filename(adj.t_index, relation)
                with open(path, "w", encoding="utf-8") as f:
                    f.write("i,j,weight\n")
                    n = matrix.shape[0]
                    for i in range(n):
                        for j in range(n):
                            f.write(f"{i},{j},{float(matrix[i, j])!r}\n")
    index = {
        "days": [g.t_index for g in graphs],
        "relations": list(RELATIONS),
        "num_stocks": graphs[0].num_stocks if graphs else 0,
        "forms": ["raw", "normalized"],
    }
    with open(directory / "index.json", "w", encoding="utf-8") as f:
        json.dump(index, f, indent=2, sort_keys=True)
        f.write("\n")


def read_graphs(directory, days: list[int] | None = None) -> dict[int, MultiRelAdjacency]:
    """Reload raw adjacency stacks written by :func:`write_graphs`."""
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise FormatError(f"{index_path}: graph index not found")
    with open(index_path, encoding="utf-8") as f:
        index = json.load(f)
    n = int(index["num_stocks"])
    wanted = index["days"] if days is None else days
    out: dict[int, MultiRelAdjacency] = {}
    for t in wanted:
        matrices = np.empty((len(RELATIONS), n, n), dtype=np.float64)
        for r, relation in enumerate(RELATIONS):
            path = directory / "raw" / _graph_filename(t, relation)
            if not path.exists():
                raise FormatError(f"{path}: graph file missing")
            with open(path, encoding="utf-8") as f:
                header = f.readline().strip()
                if header != "i,j,weight":
                    raise FormatError(f"{path}: unexpected header {header!r}")
                for line in f:
                    i_s, j_s, w_s = line.rstrip("\n").split(",")
                    matrices[r, int(i_s), int(j_s)] = float(w_s)
        out[t] = MultiRelAdjacency(t_index=t, matrices=matrices)
    return out
