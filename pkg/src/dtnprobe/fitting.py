"""Log-log least squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SlopeFit", "fit_slope"]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def fit_slope(x, y):
    """Fit ``log y = slope * log x + intercept``; needs at least 3 positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if x.size < 3:
        raise ValueError("slope fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x * y)):
        raise ValueError("slope fit needs finite positive values")
    lx, ly = np.log(x), np.log(y)
    X = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ np.array([slope, intercept])
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2))
