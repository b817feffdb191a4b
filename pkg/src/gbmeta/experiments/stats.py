from __future__ import annotations

import math

import numpy as np
from scipy.special import betainc


def pearson(xs, ys) -> tuple[float, float]:
    """Product-moment correlation and its two-sided p-value.

    The p-value comes from t = r * sqrt((n - 2) / (1 - r^2)) with n - 2
    degrees of freedom, written through the regularized incomplete beta:
    p = I_{df / (df + t^2)}(df / 2, 1 / 2).
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length 1-D series, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError(f"pearson needs n >= 3, got {n}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson is undefined for a zero-variance series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, float(np.finfo(float).tiny)
    t2 = r * r * df / (1.0 - r * r)
    p = float(betainc(0.5 * df, 0.5, df / (df + t2)))
    return r, min(1.0, max(p, float(np.finfo(float).tiny)))


def mean_ci95(samples) -> tuple[float, float]:
    """Mean and the half-width 1.96 * s / sqrt(n) (sample standard deviation)."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 2:
        raise ValueError(f"mean_ci95 needs at least 2 samples, got {s.size}")
    return float(s.mean()), float(1.96 * s.std(ddof=1) / math.sqrt(s.size))
