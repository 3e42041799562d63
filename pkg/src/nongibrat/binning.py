"""Logarithmically equal bins for period-1 profits.

Bin ``n`` (1-based) spans ``[base * 10**(offset + step*(n-1)), base * 10**(offset + step*n))``.
With the defaults this is the 20-bin scheme starting at 40 thousand yen.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BinningScheme:
    base: float = 4.0
    offset: float = 1.0
    step: float = 0.2
    n_bins: int = 20

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.base <= 0 or self.step <= 0:
            raise ValueError("base and step must be positive")

    @property
    def edges(self) -> np.ndarray:
        k = np.arange(self.n_bins + 1)
        return self.base * 10.0 ** (self.offset + self.step * k)

    def lower(self, n: int) -> float:
        """Lower bound of 1-based bin ``n``."""
        return float(self.base * 10.0 ** (self.offset + self.step * (n - 1)))

    def upper(self, n: int) -> float:
        return self.lower(n + 1)

    def assign(self, x) -> np.ndarray:
        """1-based bin index for each value; 0 for values outside the binned range."""
        x = np.asarray(x, dtype=float)
        edges = self.edges
        idx = np.searchsorted(edges, x, side="right")
        idx = np.where((x >= edges[0]) & (x < edges[-1]), idx, 0)
        return idx.astype(int)


def make_bins(scheme: BinningScheme | None = None) -> list[tuple[float, float]]:
    scheme = scheme or BinningScheme()
    e = scheme.edges
    return [(float(e[i]), float(e[i + 1])) for i in range(scheme.n_bins)]
