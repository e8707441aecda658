"""Correctly-rounded vector aggregation.

Server-side averaging uses ``math.fsum`` so that any two algebraically equal
aggregations produce the identical double. This is what lets the
memory-efficient running-average server reproduce the naive update-array
server bit for bit: both reduce to the correctly rounded value of the same
exact real sum.

The running-average server accumulates an *exact* representation of the sum
of all stored device updates: device-side differences are transmitted as
two-term error-free expansions (``two_diff``) and folded into per-coordinate
Shewchuk partials, which represent the exact real value at all times.
"""

from __future__ import annotations

import math

import numpy as np


def fsum_columns(rows: np.ndarray) -> np.ndarray:
    """Correctly rounded column sums of a 2-D array."""
    if rows.ndim != 2:
        raise ValueError("expected a 2-D array of row vectors")
    return np.array([math.fsum(col) for col in rows.T], dtype=np.float64)


def exact_mean(rows: np.ndarray, denom: int) -> np.ndarray:
    """Correctly rounded column sums divided by ``denom``.

    All server aggregation paths go through this helper so that equal
    multisets of update vectors always map to the identical average.
    """
    return fsum_columns(rows) / denom


def two_diff(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Error-free transformation of a - b: returns (hi, lo) with
    hi + lo == a - b exactly and hi == fl(a - b)."""
    b = -b
    hi = a + b
    bv = hi - a
    lo = (a - (hi - bv)) + (b - bv)
    return hi, lo


def _grow_partials(partials: list[float], x: float) -> list[float]:
    # Shewchuk/Hettinger exact accumulation: the returned list sums to
    # exactly partials-sum + x.
    result: list[float] = []
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            result.append(lo)
        x = hi
    result.append(x)
    return result


class ExactVectorSum:
    """Exact running sum of float64 vectors, one partials list per coordinate.

    ``rounded()`` returns the correctly rounded double for each coordinate,
    i.e. exactly what ``fsum_columns`` would produce over all added vectors.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._partials: list[list[float]] = [[] for _ in range(dim)]

    def add(self, vec: np.ndarray) -> None:
        if vec.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {vec.shape}")
        for j in range(self.dim):
            self._partials[j] = _grow_partials(self._partials[j], float(vec[j]))

    def rounded(self) -> np.ndarray:
        return np.array([math.fsum(p) for p in self._partials], dtype=np.float64)

    def state_dict(self) -> dict:
        return {"dim": self.dim, "partials": [list(p) for p in self._partials]}

    @classmethod
    def from_state_dict(cls, state: dict) -> "ExactVectorSum":
        out = cls(int(state["dim"]))
        out._partials = [list(map(float, p)) for p in state["partials"]]
        return out
