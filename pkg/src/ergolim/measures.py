"""Empirical measures: moments, quantiles, 1-D Wasserstein distances, mixing fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import oracles
from .schemes import StepSize, run


class MeasureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Equally weighted sample cloud; ``samples`` has a leading sample axis."""

    samples: np.ndarray

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[0] == 0:
            raise MeasureError("empty measure")
        if not np.all(np.isfinite(x)):
            raise MeasureError("non-finite sample")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.samples.ndim == 1 or (self.samples.ndim == 2 and self.samples.shape[1] == 1)

    def scalars(self) -> np.ndarray:
        if not self.is_scalar:
            raise MeasureError("measure is not scalar; push it through a functional first")
        return self.samples.reshape(-1)

    def norms(self) -> np.ndarray:
        flat = self.samples.reshape(self.n, -1)
        return np.sqrt(np.einsum("ri,ri->r", flat, flat))

    def mean(self):
        return self.samples.mean(axis=0)

    def moment(self, order: float) -> float:
        return moment(self, order)

    def quantile(self, q):
        return np.quantile(self.scalars(), q)

    def pushforward(self, f) -> "EmpiricalMeasure":
        batch = getattr(f, "batch", f)
        return EmpiricalMeasure(batch(self.samples))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value"])
            for v in self.scalars():
                w.writerow([repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls(np.array([float(r[0]) for r in rows[1:]]))


def _measure(m) -> EmpiricalMeasure:
    return m if isinstance(m, EmpiricalMeasure) else EmpiricalMeasure(np.asarray(m, dtype=float))


def moment(m, order: float) -> float:
    """Mean of |sample|^order."""
    if not order >= 1:
        raise MeasureError(f"moment order {order} must be >= 1")
    return float(np.mean(_measure(m).norms() ** order))


def _sorted_pair(m1, m2):
    a = _measure(m1).scalars()
    b = _measure(m2).scalars()
    if a.size != b.size:
        raise MeasureError(f"size mismatch {a.size} vs {b.size}")
    return np.sort(a), np.sort(b)


def wasserstein2_1d(m1, m2) -> float:
    """W2 between equal-size scalar clouds via the sorted (quantile) coupling."""
    a, b = _sorted_pair(m1, m2)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def bounded_wasserstein(m1, m2, p: float = 2.0) -> float:
    """(mean of 1 ^ |x_(i) - y_(i)|^p)^(1/p) on the sorted coupling."""
    if not p >= 1:
        raise MeasureError("p must be >= 1")
    a, b = _sorted_pair(m1, m2)
    return float(np.mean(np.minimum(1.0, np.abs(a - b) ** p)) ** (1.0 / p))


@dataclass(frozen=True)
class MixingFit:
    rate: float
    r2: float
    n_used: int
    intercept: float

    def to_dict(self):
        return {"rate": self.rate, "r2": self.r2, "n_used": self.n_used, "intercept": self.intercept}


NOISE_FLOOR = 1e-8


def mixing_fit(decay, floor: float = NOISE_FLOOR) -> MixingFit:
    """Exponential rate from ``[(t_k, D_k), ...]`` by least squares on log D_k.

    Points are used in time order up to the first one below ``floor`` or the
    first strict increase of D_k.
    """
    pts = sorted((float(t), float(d)) for t, d in decay)
    used = []
    for t, d in pts:
        if not d > floor or (used and d > used[-1][1]):
            break
        used.append((t, d))
    if len(used) < 3:
        raise MeasureError(f"only {len(used)} usable points for the mixing fit (need 3)")
    t = np.array([u[0] for u in used])
    y = np.log([u[1] for u in used])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(y * y))) else 1.0 - ss_res / ss_tot
    rate = -float(slope)
    if abs(rate) < 1e-12:
        rate = 0.0
    return MixingFit(rate, r2, len(used), float(intercept))


def invariant_cloud(model, scheme, step, k_total: int, k_burn: int = 0, thinning: int = 1,
                    seed: int = 0, x0=None, replicas: int = 1, functional=None) -> EmpiricalMeasure:
    """States at k = k_burn + thinning, k_burn + 2 thinning, ... <= k_total.

    Several replicas pool their clouds in replica order.  With ``functional``
    the cloud holds f-values instead of states.
    """
    if not k_total > k_burn:
        raise MeasureError("k_total must exceed k_burn")
    if thinning < 1:
        raise MeasureError("thinning must be >= 1")
    step = step if isinstance(step, StepSize) else StepSize(float(step))
    burn = run(model, scheme, step, k_burn, x0, seed=seed, replicas=replicas)
    obs = functional.batch if functional is not None else (lambda s: s.copy())
    kept = (k_total - k_burn) // thinning
    res = run(model, scheme, step, kept * thinning, burn.final.value, seed=seed,
              replicas=replicas, observe=obs, every=thinning, k0=k_burn)
    vals = res.values[:, 1:]
    return EmpiricalMeasure(vals.reshape((-1,) + vals.shape[2:]))


def exact_ou_cloud(model, n: int, seed: int = 0, scheme: str = "exact", tau: float = 0.0):
    """i.i.d. stationary Gaussian cloud of the OU model (or of BEM/EM on it)."""
    theta, sigma = oracles.ou_params(model)
    return EmpiricalMeasure(oracles.stationary_sample(scheme, theta, sigma, tau, n, seed, model.dim))


def coupled_invariant_clouds(model, tau: float, n: int, k_burn: int, thinning: int = 1,
                             seed: int = 0, replicas: int = 1, scheme: str = "bem"):
    """Clouds of BEM (or EM) on OU and of the exact OU process, sharing noise.

    The exact path starts from a stationary draw, so every state in its cloud
    is exactly N(0, sigma^2 / (2 theta)); the scheme path starts at the same
    point and is driven by the same Brownian increments.  Returns
    ``(scheme_cloud, exact_cloud)`` of first coordinates, ``n`` samples each.
    """
    theta, sigma = oracles.ou_params(model)
    per = math.ceil(n / replicas)
    x0 = oracles.stationary_sample("exact", theta, sigma, tau, replicas, seed + 1, model.dim)
    steps = k_burn + per * thinning
    exact, approx = oracles.coupled_ou_paths(theta, sigma, tau, steps, x0, seed, replicas,
                                             scheme=scheme, d=model.dim)
    idx = k_burn + thinning * np.arange(1, per + 1)
    a = approx[:, idx, 0].reshape(-1)[:n]
    e = exact[:, idx, 0].reshape(-1)[:n]
    return EmpiricalMeasure(a), EmpiricalMeasure(e)


def gaussian_w2(var1: float, var2: float, mean1: float = 0.0, mean2: float = 0.0) -> float:
    """W2 between two 1-D Gaussians."""
    return math.hypot(mean1 - mean2, math.sqrt(var1) - math.sqrt(var2))
