"""Normal CDF, one-sample Kolmogorov-Smirnov test against N(0, v^2), QQ data.

KS p-values come from the exact finite-n null distribution of D
(``scipy.stats.kstwo``), so the test is valid for any sample size.
``normal_cdf`` uses ``scipy.special.ndtr`` (Cephes erf/erfc rational
approximations), whose absolute error is below 1e-15 across the real line,
well inside the 1e-7 requirement.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstwo


class StatsError(ValueError):
    pass


def normal_cdf(z):
    """Standard normal CDF; scalar in, float out, arrays elementwise."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def normal_ppf(p, tol: float = 1e-8):
    """Inverse of :func:`normal_cdf` by bisection to ``tol`` in z."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise StatsError("quantile level must lie in (0, 1)")
    lo = np.full(p.shape, -40.0)
    hi = np.full(p.shape, 40.0)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        val = ndtr(mid)
        below = val < p
        exact = val == p  # collapse the bracket on an exact root
        lo = np.where(below | exact, mid, lo)
        hi = np.where(below & ~exact, hi, mid)
    out = 0.5 * (lo + hi)
    return float(out) if out.ndim == 0 else out


def ks_statistic(samples, v2: float) -> float:
    """D = sup |F_n(x) - Phi(x / sqrt(v2))|, evaluated at the jump points."""
    if not v2 > 0:
        raise StatsError(f"variance v2={v2} must be > 0")
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise StatsError("no samples")
    cdf = ndtr(x / math.sqrt(v2))
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n: int
    v2: float

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "v2": self.v2}


def ks_test(samples, v2: float) -> KsResult:
    """KS test with the fully specified null N(0, v2); exact finite-n p-value."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    d = ks_statistic(x, v2)
    return KsResult(d, float(kstwo.sf(d, x.size)), int(x.size), float(v2))


def qq_data(samples, v2: float):
    """Pairs (sqrt(v2) Phi^-1((i - 0.5)/n), x_(i))."""
    if not v2 > 0:
        raise StatsError(f"variance v2={v2} must be > 0")
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    theo = math.sqrt(v2) * np.atleast_1d(normal_ppf((np.arange(1, n + 1) - 0.5) / n))
    return [(float(t), float(e)) for t, e in zip(theo, x)]


def write_qq_csv(path, pairs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theoretical", "empirical"])
        for t, e in pairs:
            w.writerow([repr(t), repr(e)])
