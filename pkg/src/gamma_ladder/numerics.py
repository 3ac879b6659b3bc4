"""Shared numerical helpers.

The measures handled here have weights proportional to exp(-n*F) with n*F
reaching a few thousand, far beyond float64 range, so every mass, capacity
and functional that survives to a report is assembled in log space and only
exponentiated once the exponents have cancelled.  The helpers below keep
that discipline in one place.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

# Normalized probabilities below this are flushed to exact zero (with a log
# warning at the call site); they are not representable to any useful
# precision in linear space.
FLUSH_THRESHOLD = 1e-300

# Sums with at least this many terms go through compensated summation.
COMPENSATED_SUM_CUTOFF = 10_000


def stable_sum(values) -> float:
    """Sum of a 1-d array, compensated (math.fsum) for long accumulations."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size >= COMPENSATED_SUM_CUTOFF:
        return math.fsum(arr.tolist())
    return float(np.sum(arr))


def log_sum_exp(log_terms) -> float:
    """log(sum(exp(t))) over possibly -inf terms; -inf for an empty/all--inf sum."""
    arr = np.asarray(log_terms, dtype=float).ravel()
    if arr.size == 0:
        return -math.inf
    return float(logsumexp(arr))


def normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (log_w - log Z, log Z) so the weights sum to one exactly in logs."""
    log_z = log_sum_exp(log_w)
    if log_z == -math.inf:
        raise ValueError("cannot normalize: all weights are zero")
    return log_w - log_z, log_z


def log_diff_of_sqrt_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log((sqrt(e^a) - sqrt(e^b))^2), elementwise, tolerating -inf entries.

    This is the edge term of the rate functional in log space:
        (e^{a/2} - e^{b/2})^2 = e^{m} * (1 - e^{-|a-b|/2})^2,  m = max(a, b).
    Ties (a == b, including both -inf) give -inf, i.e. a vanishing term.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.maximum(a, b)
    gap = np.abs(a - b)
    out = np.full(np.broadcast(a, b).shape, -np.inf)
    finite = np.isfinite(m)
    # where only one side is -inf the term is e^m exactly
    one_sided = finite & ~np.isfinite(np.minimum(a, b))
    out[one_sided] = m[one_sided]
    both = finite & np.isfinite(np.minimum(a, b)) & (gap > 0)
    # log(1 - e^{-g/2}) via log(-expm1(-g/2)), stable for small gaps
    g = gap[both]
    out[both] = m[both] + 2.0 * np.log(-np.expm1(-0.5 * g))
    return out


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit y ~ a + b*x; returns (a, b, sse)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def relative_error(value: float, target: float) -> float:
    """|value - target| / |target|, falling back to absolute error at target 0."""
    if target != 0.0:
        return abs(value - target) / abs(target)
    return abs(value)
