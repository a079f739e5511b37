"""Closed forms for Ornstein-Uhlenbeck models and their BEM/EM discretizations.

Used as independent references: the stationary variances, autocovariances
and long-run variances below follow from the linear recursions alone and do
not touch the simulation code.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

from . import rng


def ou_params(model):
    """(theta, sigma) of a builtin OU model."""
    if getattr(model, "name", None) != "ou":
        raise ValueError("closed forms exist only for the OU model")
    return float(model.params["theta"]), float(model.params["sigma"])


def recursion_factor(scheme: str, theta: float, tau: float) -> float:
    """Per-step contraction phi of y' = phi y + noise."""
    if scheme == "bem":
        return 1.0 / (1.0 + theta * tau)
    if scheme == "em":
        return 1.0 - theta * tau
    if scheme == "exact":
        return math.exp(-theta * tau)
    raise ValueError(f"no closed form for scheme {scheme!r}")


def stationary_variance(scheme: str, theta: float, sigma: float, tau: float = 0.0) -> float:
    """Per-coordinate stationary variance of the process or of its discretization."""
    if scheme == "exact":
        return sigma ** 2 / (2 * theta)
    if scheme == "bem":
        return sigma ** 2 / (2 * theta + theta ** 2 * tau)
    if scheme == "em":
        if not 0 < theta * tau < 2:
            raise ValueError("EM on OU has no stationary law unless 0 < theta tau < 2")
        return sigma ** 2 / (2 * theta - theta ** 2 * tau)
    raise ValueError(f"no closed form for scheme {scheme!r}")


def autocovariance(scheme: str, theta: float, sigma: float, tau: float, lag: int,
                   functional: str = "x") -> float:
    """Stationary lag covariance of f(y_k) for f = x or x^2 (one coordinate)."""
    v = stationary_variance(scheme, theta, sigma, tau)
    phi = recursion_factor(scheme, theta, tau)
    if functional == "x":
        return v * phi ** lag
    if functional == "x2":
        return 2.0 * v * v * phi ** (2 * lag)
    raise ValueError(f"unknown functional {functional!r}")


def long_run_variance(scheme: str, theta: float, sigma: float, tau: float = 0.0,
                      functional: str = "x") -> float:
    """v^2 = tau c_0 + 2 tau sum_{j>=1} c_j in closed form; ``exact`` is the SDE value.

    For f = x the BEM value equals sigma^2 / theta^2 for every tau.
    """
    if scheme == "exact":
        if functional == "x":
            return sigma ** 2 / theta ** 2
        if functional == "x2":
            return sigma ** 4 / (2 * theta ** 3)
        raise ValueError(f"unknown functional {functional!r}")
    v = stationary_variance(scheme, theta, sigma, tau)
    phi = recursion_factor(scheme, theta, tau)
    if functional == "x":
        return tau * v * (1 + phi) / (1 - phi)
    if functional == "x2":
        return tau * 2 * v * v * (1 + phi * phi) / (1 - phi * phi)
    raise ValueError(f"unknown functional {functional!r}")


def truncated_plugin_value(scheme, theta, sigma, tau, lag, functional="x") -> float:
    """Expected plug-in value tau c_0 + 2 tau sum_{j=1}^{L} c_j (population covariances)."""
    v = stationary_variance(scheme, theta, sigma, tau)
    phi = recursion_factor(scheme, theta, tau)
    if functional == "x":
        c0, r = v, phi
    elif functional == "x2":
        c0, r = 2 * v * v, phi * phi
    else:
        raise ValueError(f"unknown functional {functional!r}")
    geo = r * (1 - r ** lag) / (1 - r)
    return tau * c0 * (1 + 2 * geo)


def clt_statistic_variance(scheme, theta, sigma, tau, k) -> float:
    """Exact Var of sqrt(tau/k) sum_{i<k} y_i for f = x from a deterministic start.

    With y_i = phi^i x0 + sum_{m<i} phi^(i-m) a w_m, the sum over i < k
    collects each innovation w_m with weight a phi (1 - phi^(k-1-m)) / (1 - phi).
    """
    phi = recursion_factor(scheme, theta, tau)
    if scheme == "bem":
        gain = 1.0  # y' = phi (y + sigma dW)
    elif scheme == "em":
        gain = 1.0 / phi  # y' = phi y + sigma dW
    else:
        raise ValueError("statistic variance implemented for bem and em")
    m = np.arange(k - 1)
    w = gain * phi * (1 - phi ** (k - 1 - m)) / (1 - phi)
    return float(tau / k * sigma ** 2 * tau * np.sum(w * w))


def delay_long_run_variance(a: float, b: float, sigma: float) -> float:
    """Spectral density at 0 of dX = (-a X(t) + b X(t - delta)) dt + sigma dW.

    The transfer function at frequency zero is 1 / (a - b), so v^2 for
    f(phi) = phi(0) is sigma^2 / (a - b)^2; the EM recursion has the same
    value because its characteristic polynomial at z = 1 is (a - b) tau.
    """
    if not a > abs(b):
        raise ValueError("need a > |b| for a stationary delay equation")
    return sigma ** 2 / (a - b) ** 2


# --------------------------------------------------------------------------
# samplers

def stationary_sample(scheme: str, theta: float, sigma: float, tau: float, n: int,
                      seed: int = 0, d: int = 1) -> np.ndarray:
    """i.i.d. draws from the stationary Gaussian of the SDE or its discretization."""
    std = math.sqrt(stationary_variance(scheme, theta, sigma, tau))
    return std * np.random.default_rng(seed).standard_normal((n, d))


def exact_step_coefficients(theta: float, sigma: float, tau: float):
    """X' = e^{-theta tau} X + c1 z1 + c2 z2 with dW = sqrt(tau) z1.

    c1 = Cov(int e^{-theta(tau-s)} sigma dW_s, W_tau) / sqrt(tau); c2 carries the
    remaining variance, so (X', dW) has the exact joint law.
    """
    e = math.exp(-theta * tau)
    c1 = sigma * (1.0 - e) / (theta * math.sqrt(tau))
    total = sigma ** 2 * -math.expm1(-2 * theta * tau) / (2 * theta)
    c2 = math.sqrt(max(total - c1 * c1, 0.0))
    return e, c1, c2


def coupled_ou_paths(theta, sigma, tau, n_steps, x0, seed, replicas, scheme="bem", d=1,
                     k0=0):
    """Exact OU and a BEM/EM (or exact) path driven by the same Brownian increments.

    Returns ``(exact, approx)`` of shape ``(R, n_steps + 1, d)``.  The noise is
    read from width-``2d`` keyed streams; components ``0..d-1`` are the
    Brownian increments (the same words a width-``d`` scheme run uses) and
    ``d..2d-1`` the extra exact-solution channel.  Both widths share a step
    stride only for ``d <= 2``.
    """
    if d > 2:
        raise ValueError("shared-noise OU coupling supports d <= 2")
    ids = np.arange(replicas) if isinstance(replicas, int) else np.asarray(replicas)
    z = rng.normal_block(seed, ids, 2 * d, k0, k0 + n_steps)
    z1, z2 = z[..., :d], z[..., d:]
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (ids.size, d))
    e, c1, c2 = exact_step_coefficients(theta, sigma, tau)
    exact = _filter(e, c1 * z1 + c2 * z2, x0)
    if scheme == "exact":
        approx = exact.copy()
    else:
        phi = recursion_factor(scheme, theta, tau)
        u = sigma * math.sqrt(tau) * z1
        approx = _filter(phi, phi * u if scheme == "bem" else u, x0)
    return exact, approx


def _filter(phi, u, x0):
    out, _ = lfilter([1.0], [1.0, -phi], u, axis=1, zi=phi * x0[:, None, :])
    return np.concatenate([x0[:, None, :], out], axis=1)
