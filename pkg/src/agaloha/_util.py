"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

__all__ = ["binom_pmf", "student_t_halfwidth"]


def binom_pmf(n: int, q: float) -> np.ndarray:
    """Binomial(n, q) pmf over 0..n, exact at the q = 0 and q = 1 endpoints."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    pmf = np.zeros(n + 1)
    if q <= 0.0:
        pmf[0] = 1.0
        return pmf
    if q >= 1.0:
        pmf[n] = 1.0
        return pmf
    k = np.arange(n + 1)
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    pmf = np.exp(logc + k * np.log(q) + (n - k) * np.log1p(-q))
    return pmf / pmf.sum()


def student_t_halfwidth(values: np.ndarray, confidence: float = 0.95) -> float:
    """Half-width of the Student-t CI for the mean; +inf for a single value."""
    from scipy.stats import t as student_t

    values = np.asarray(values, dtype=float)
    r = values.size
    if r < 2:
        return float("inf")
    quantile = student_t.ppf(0.5 + confidence / 2.0, r - 1)
    return float(quantile * values.std(ddof=1) / np.sqrt(r))
