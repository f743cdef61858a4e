"""Piecewise-linear utilities used by the solvers.

Everything here works on knot/value arrays with strictly increasing knots.
"""

from __future__ import annotations

import numpy as np


def concave_envelope(knots: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Smallest concave majorant of the knot/value pairs, sampled at the knots.

    Computed with a monotone-chain pass over the upper hull; O(n).
    """
    x = np.asarray(knots, dtype=float)
    y = np.asarray(values, dtype=float)
    hull = []  # indices on the upper hull, left to right
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies (weakly) below chord a->i
            if (y[b] - y[a]) * (x[i] - x[a]) <= (y[i] - y[a]) * (x[b] - x[a]) + 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    hx, hy = x[hull], y[hull]
    return np.interp(x, hx, hy)


def nonincreasing_envelope(values: np.ndarray) -> np.ndarray:
    """Smallest nonincreasing majorant along the knot axis (running max from the right)."""
    return np.maximum.accumulate(np.asarray(values, dtype=float)[::-1])[::-1]


def pl_value(knots: np.ndarray, values: np.ndarray, q: float) -> float:
    """Evaluate the linear interpolant at q; q must lie within the knot range."""
    if q < knots[0] - 1e-9 or q > knots[-1] + 1e-9:
        raise ValueError(f"query {q} outside knot range [{knots[0]}, {knots[-1]}]")
    return float(np.interp(q, knots, values))


def right_slope(knots: np.ndarray, values: np.ndarray, q: float) -> float:
    """Slope of the segment immediately to the right of q.

    At the last knot the final segment's slope is returned.
    """
    if q < knots[0] - 1e-9 or q > knots[-1] + 1e-9:
        raise ValueError(f"query {q} outside knot range [{knots[0]}, {knots[-1]}]")
    i = int(np.searchsorted(knots, q, side="right")) - 1
    i = min(max(i, 0), knots.size - 2)
    return float((values[i + 1] - values[i]) / (knots[i + 1] - knots[i]))


def slopes(knots: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-segment slopes, left to right."""
    return np.diff(values) / np.diff(knots)


def is_concave(knots: np.ndarray, values: np.ndarray, tol: float = 1e-7) -> bool:
    s = slopes(knots, values)
    return bool(np.all(np.diff(s) <= tol))


def is_nonincreasing(values: np.ndarray, tol: float = 1e-7) -> bool:
    return bool(np.all(np.diff(values) <= tol))
