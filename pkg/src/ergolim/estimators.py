"""Time averages, CLT normalization and long-run variance estimators."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .models import AssumptionMeta


class EstimatorError(ValueError):
    pass


def _ceil_int(x: float) -> int:
    """ceil that ignores floating noise below 1e-9 relative (0.01**-1.5 -> 1000)."""
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


@dataclass(frozen=True)
class CltParams:
    tau: float
    lam: float
    alpha: tuple[float, float] = (0.0, 0.5)
    gamma: float = 1.0
    k: int = 1
    h: float = 0.0
    k_burn: int = 0

    def __post_init__(self):
        if not 0 < self.lam < self.alpha[1] * self.gamma:
            raise EstimatorError(
                f"lambda out of open interval (0, alpha2 gamma) = (0, {self.alpha[1] * self.gamma})")
        if self.k < 1:
            raise EstimatorError("k must be >= 1")
        if not 0 <= self.h <= 1:
            raise EstimatorError(f"h={self.h} outside [0, 1]")
        if self.k_burn < 0:
            raise EstimatorError("k_burn must be >= 0")

    @property
    def n_modes(self) -> int | None:
        """Spectral mode count N = 1/h when the coupling is spatial."""
        return _ceil_int(1.0 / self.h) if self.h > 0 else None

    def to_dict(self):
        return {"tau": self.tau, "lambda": self.lam, "alpha": list(self.alpha),
                "gamma": self.gamma, "k": self.k, "h": self.h, "k_burn": self.k_burn}


def clt_params(tau: float, lam: float, alpha=(0.0, 0.5), gamma: float = 1.0,
               k_burn: int = 0) -> CltParams:
    """k = ceil(tau^(-1 - 2 lam)); h = tau^(alpha2 / alpha1), or 0 without space."""
    if not 0 < tau <= 1:
        raise EstimatorError(f"tau={tau} outside (0, 1]")
    a1, a2 = float(alpha[0]), float(alpha[1])
    if not 0 < lam < a2 * gamma:
        raise EstimatorError(f"lambda out of open interval (0, {a2 * gamma})")
    k = _ceil_int(tau ** (-1.0 - 2.0 * lam))
    h = tau ** (a2 / a1) if a1 > 0 else 0.0
    return CltParams(tau, lam, (a1, a2), gamma, k, h, k_burn)


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    clt_passed: bool
    lln_passed: bool
    required_q_and_r: float
    required_q_lln: float
    reason: str = ""

    def to_dict(self):
        return {"passed": self.passed, "clt_passed": self.clt_passed,
                "lln_passed": self.lln_passed, "required_q_and_r": self.required_q_and_r,
                "required_q_lln": self.required_q_lln, "reason": self.reason}


def check_condition(p: float, gamma: float, lam: float, meta: AssumptionMeta,
                    q: float | None = None, r: float | None = None) -> ConditionResult:
    """The CLT moment condition and the LLN condition for given (q, r).

    CLT:  qt^2 max(3, 1/lam + 1) (p max(qt, rt) + (3 + 4 max(kappa, beta)) gamma) <= q ^ r
    LLN:  p (1 + qt) + 2 (1 + kappa) gamma <= q
    """
    q = meta.q if q is None else q
    r = meta.r if r is None else r
    qt, rt = meta.q_tilde, meta.r_tilde
    req_lln = p * (1 + qt) + 2 * (1 + meta.kappa) * gamma
    lln_ok = req_lln <= q
    a2 = meta.alpha[1]
    if not 0 < lam < a2 * gamma:
        return ConditionResult(False, False, lln_ok, math.inf, req_lln,
                               "lambda out of open interval")
    req = qt * qt * max(3.0, 1.0 / lam + 1.0) * (p * max(qt, rt)
                                                 + (3 + 4 * max(meta.kappa, meta.beta)) * gamma)
    clt_ok = req <= min(q, r)
    reason = "" if clt_ok and lln_ok else (
        f"need q ^ r >= {req}" if not clt_ok else f"need q >= {req_lln}")
    return ConditionResult(clt_ok and lln_ok, clt_ok, lln_ok, req, req_lln, reason)


def _series(traj, k=None) -> np.ndarray:
    x = np.asarray(traj, dtype=float).reshape(-1)
    if k is not None:
        if k < 1:
            raise EstimatorError("k must be >= 1")
        if x.size < k:
            raise EstimatorError(f"need {k} values, got {x.size}")
        x = x[:k]
    return x


def time_average(traj, k: int | None = None) -> float:
    """S_k / k over the first k values."""
    x = _series(traj, k)
    if x.size == 0:
        raise EstimatorError("empty trajectory")
    return float(np.mean(x))


def clt_statistic(traj, params: CltParams, mu_f: float) -> float:
    """sqrt(tau / k) sum_{i<k} (f_i - mu_f)."""
    x = _series(traj, params.k)
    return float(math.sqrt(params.tau / params.k) * np.sum(x - mu_f))


def clt_statistics(values: np.ndarray, params: CltParams, mu_f: float) -> np.ndarray:
    """Row-wise statistics for a replica batch ``(R, >= k)``."""
    v = np.asarray(values, dtype=float)
    if v.shape[1] < params.k:
        raise EstimatorError(f"need {params.k} values per replica, got {v.shape[1]}")
    return math.sqrt(params.tau / params.k) * np.sum(v[:, :params.k] - mu_f, axis=1)


@dataclass(frozen=True)
class VarianceEstimate:
    method: str
    value: float
    lag: int | None = None
    batch: int | None = None
    stderr: float | None = None
    raw: float | None = None
    clamped: bool = False
    tail_flag: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method, "value": self.value, "lag": self.lag,
                "batch": self.batch, "stderr": self.stderr, "raw": self.raw,
                "clamped": self.clamped, "tail_flag": self.tail_flag, **self.extras}


def autocovariances(traj, max_lag: int) -> np.ndarray:
    """c_j = (1/n) sum_{i < n-j} (x_i - xbar)(x_{i+j} - xbar), j = 0..max_lag.

    c_0 is a direct dot product; the other lags come from one FFT.
    """
    x = _series(traj)
    n = x.size
    if max_lag >= n:
        raise EstimatorError(f"lag {max_lag} must be below the trajectory length {n}")
    dx = x - x.mean()
    out = np.empty(max_lag + 1)
    out[0] = float(np.dot(dx, dx)) / n
    if max_lag > 0:
        size = 1 << int(math.ceil(math.log2(2 * n)))
        spec = np.fft.rfft(dx, size)
        acf = np.fft.irfft(spec * np.conj(spec), size)[:max_lag + 1] / n
        out[1:] = acf[1:]
    return out


def _clamp(method, raw, **kw) -> VarianceEstimate:
    raw = float(raw)
    clamped = raw < 0
    if clamped:
        warnings.warn(f"{method} variance estimate {raw} negative; clamped to 0", RuntimeWarning)
    return VarianceEstimate(method, max(raw, 0.0), raw=raw, clamped=clamped, **kw)


def variance_plugin(traj, tau: float, lag: int) -> VarianceEstimate:
    """v^2 ~ tau c_0 + 2 tau sum_{j=1}^{L} c_j; flags |c_L| > 5% of c_0."""
    if lag < 0:
        raise EstimatorError("lag must be >= 0")
    c = autocovariances(traj, lag)
    raw = tau * c[0] + 2.0 * tau * float(np.sum(c[1:]))
    tail = bool(lag > 0 and c[0] > 0 and abs(c[lag]) > 0.05 * c[0])
    return _clamp("plugin", raw, lag=lag, tail_flag=tail)


def default_lag(traj, tau: float, cap: int | None = None) -> int:
    """L = ceil(10 / (rate tau)) with rate = -log(c_1 / c_0) / tau, capped at n/100."""
    x = _series(traj)
    cap = max(1, x.size // 100) if cap is None else cap
    c = autocovariances(x, 1)
    if c[0] <= 0 or c[1] <= 0:
        return min(1, cap)
    ratio = c[1] / c[0]
    if ratio >= 1:
        return cap
    rate = -math.log(ratio) / tau
    return int(min(cap, _ceil_int(10.0 / (rate * tau))))


def variance_batch_means(traj, tau: float, batch: int) -> VarianceEstimate:
    """(B tau) times the sample variance of the means of consecutive batches."""
    x = _series(traj)
    if batch < 1:
        raise EstimatorError("batch size must be >= 1")
    nb = x.size // batch
    if nb < 2:
        raise EstimatorError(f"need at least 2 batches of size {batch}, have {nb}")
    means = x[: nb * batch].reshape(nb, batch).mean(axis=1)
    raw = batch * tau * float(np.var(means, ddof=1))
    se = raw * math.sqrt(2.0 / (nb - 1))
    return _clamp("batch_means", raw, batch=batch, stderr=se)


def variance_replica(stats) -> VarianceEstimate:
    """Sample variance of independent CLT statistics across replicas."""
    s = np.asarray(stats, dtype=float)
    s = s[np.isfinite(s)]
    if s.size < 2:
        raise EstimatorError("need at least 2 replica statistics")
    v = float(np.var(s, ddof=1))
    return VarianceEstimate("replica", v, stderr=v * math.sqrt(2.0 / (s.size - 1)), raw=v)


@dataclass(frozen=True)
class LlnFit:
    slope: float
    intercept: float
    t: tuple
    mse: tuple
    means: tuple

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "t": list(self.t),
                "mse": list(self.mse), "means": list(self.means)}


def running_means(series, k_grid) -> np.ndarray:
    """S_k / k for each row of ``series (R, n)`` and each k in ``k_grid``."""
    v = np.atleast_2d(np.asarray(series, dtype=float))
    ks = np.asarray(k_grid, dtype=np.int64)
    if ks.max() > v.shape[1]:
        raise EstimatorError(f"need {ks.max()} values, got {v.shape[1]}")
    csum = np.cumsum(v, axis=1)
    return csum[:, ks - 1] / ks


def lln_rate_from_means(means: np.ndarray, k_grid, tau: float, mu: float) -> LlnFit:
    """log-log slope of the mean squared error of S_k/k about ``mu`` against t_k."""
    ks = np.asarray(k_grid, dtype=float)
    _check_grid(ks)
    m = np.atleast_2d(means)
    mse = np.mean((m - mu) ** 2, axis=0)
    t = ks * tau
    good = mse > 0
    if good.sum() < 2:
        slope, intercept = 0.0, float(np.log(mse.max())) if mse.max() > 0 else -math.inf
    else:
        slope, intercept = np.polyfit(np.log(t[good]), np.log(mse[good]), 1)
    return LlnFit(float(slope), float(intercept), tuple(t.tolist()), tuple(mse.tolist()),
                  tuple(np.mean(m, axis=0).tolist()))


def _check_grid(ks):
    if ks.size < 2 or np.any(np.diff(ks) <= 0) or ks[0] < 1:
        raise EstimatorError("k_grid must be increasing positive integers")
    if math.log10(ks[-1] / ks[0]) < 1.5 - 1e-12:
        raise EstimatorError("degenerate grid: k_grid must span at least 1.5 decades")


def simulate_running_means(model, scheme, f, tau: float, k_grid, replicas, seed: int,
                           x0=None, on_failure: str = "raise", block: int = 8192):
    """S_k / k at each k of ``k_grid`` for a batch of replicas, streamed.

    Returns ``(means (R, len(k_grid)), run_result)``; f-values are never
    stored, only prefix sums at the grid points.
    """
    from .schemes import run

    ks = np.asarray(sorted(k_grid), dtype=np.int64)
    ids = np.arange(replicas) if isinstance(replicas, int) else np.asarray(replicas)
    out = np.empty((ids.size, ks.size))
    carry = np.zeros(ids.size)

    def sink(first, vals):
        nonlocal carry
        csum = np.cumsum(vals, axis=1) + carry[:, None]
        for j, k in enumerate(ks):
            if first < k <= first + vals.shape[1]:
                out[:, j] = csum[:, k - first - 1] / k
        carry = csum[:, -1]

    res = run(model, scheme, tau, int(ks[-1]) - 1, x0, seed=seed, replicas=ids,
              observe=f.batch, sink=sink, on_failure=on_failure, block=block)
    return out, res


def lln_rate_fit(model, scheme, f, tau: float, k_grid, replicas: int, seed: int,
                 mu: float | None = None, x0=None) -> LlnFit:
    """Simulate ``replicas`` trajectories and fit the MSE decay of S_k/k.

    ``mu`` defaults to the functional's known limit; without one the grand
    mean at the largest k is used as reference.
    """
    ks = np.asarray(sorted(k_grid), dtype=np.int64)
    _check_grid(ks)
    means, _ = simulate_running_means(model, scheme, f, tau, ks, replicas, seed, x0)
    ref = f.mu if mu is None else mu
    if ref is None:
        ref = float(np.mean(means[:, -1]))
    return lln_rate_from_means(means, ks, tau, ref)
