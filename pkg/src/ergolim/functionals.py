"""Test functionals in C_{p,gamma}, the quasi-metric d_{p,gamma} and empirical norm bounds.

A functional acts on a single state or on a batch of states with a leading
replica axis.  ``state_ndim`` tells the two apart: vector states have one
axis, delay segments ``(n_seg + 1, d)`` have two.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class FunctionalError(ValueError):
    pass


def _norms(states: np.ndarray) -> np.ndarray:
    flat = states.reshape(states.shape[0], -1)
    return np.sqrt(np.einsum("ri,ri->r", flat, flat))


@dataclass(frozen=True, eq=False)
class TestFunctional:
    """f: state -> R with declared growth exponent p and Hoelder exponent gamma."""

    __test__ = False  # not a pytest class

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    p: float = 2.0
    gamma: float = 1.0
    state_ndim: int = 1
    mu: float | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.p >= 1:
            raise FunctionalError(f"growth exponent p={self.p} must be >= 1")
        if not 0 < self.gamma <= 1:
            raise FunctionalError(f"Hoelder exponent gamma={self.gamma} outside (0, 1]")

    def batch(self, states) -> np.ndarray:
        """Values on a batch ``(R, *state)``, shape ``(R,)``."""
        x = np.asarray(states, dtype=float)
        if x.ndim == self.state_ndim:
            x = x[:, None] if self.state_ndim == 1 else x[:, :, None]
        return np.asarray(self.fn(x), dtype=float).reshape(x.shape[0])

    def __call__(self, state):
        x = np.asarray(state, dtype=float)
        if x.ndim < self.state_ndim:
            x = x.reshape((1,) * (self.state_ndim - x.ndim) + x.shape)
        if x.ndim == self.state_ndim:
            return float(self.batch(x[None])[0])
        return self.batch(x)

    def with_mu(self, mu: float | None) -> "TestFunctional":
        return TestFunctional(self.name, self.fn, self.p, self.gamma, self.state_ndim, mu, self.params)


def quasi_metric(u1, u2, p: float, gamma: float):
    """d_{p,gamma}(u1, u2) = (1 ^ |u1 - u2|^gamma) (1 + |u1|^p + |u2|^p)^(1/2).

    For single states; :func:`quasi_metric_batch` handles batches of pairs.
    """
    a = np.asarray(u1, dtype=float)
    b = np.asarray(u2, dtype=float)
    if a.shape != b.shape:
        raise FunctionalError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(quasi_metric_batch(a.reshape(1, -1), b.reshape(1, -1), p, gamma)[0])


def quasi_metric_batch(a, b, p: float, gamma: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise FunctionalError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    dist = _norms(a - b)
    clamp = np.minimum(1.0, dist ** gamma)
    return clamp * np.sqrt(1.0 + (_norms(a) ** p + _norms(b) ** p))


def growth_term(f: TestFunctional, samples, p: float | None = None) -> float:
    """max over the cloud of |f(u)| / (1 + |u|^(p/2))."""
    p = f.p if p is None else p
    x = _as_batch(f, samples)
    return float(np.max(np.abs(f.batch(x)) / (1.0 + _norms(x) ** (p / 2))))


def holder_ratio(f: TestFunctional, u1, u2, p: float | None = None, gamma: float | None = None):
    """|f(u1) - f(u2)| / d_{p,gamma}(u1, u2) for batches of pairs (0 where u1 = u2)."""
    p = f.p if p is None else p
    gamma = f.gamma if gamma is None else gamma
    a = _as_batch(f, u1)
    b = _as_batch(f, u2)
    d = quasi_metric_batch(a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1), p, gamma)
    num = np.abs(f.batch(a) - f.batch(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(d > 0, num / np.where(d > 0, d, 1.0), 0.0)
    return out


def _as_batch(f, samples) -> np.ndarray:
    """Clouds of scalars ``(n,)`` become ``(n, 1)``; a lone state gains a batch axis."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if f.state_ndim == 1 and x.ndim == 1:
        return x[:, None]
    if x.ndim == f.state_ndim:
        return x[None]
    return x


_CHUNK = 1024
_EXHAUSTIVE = 64


def estimate_pg_norm(f: TestFunctional, cloud, pairs: int = 1000, rng_seed: int = 0,
                     p: float | None = None, gamma: float | None = None) -> float:
    """Empirical lower bound of the (p, gamma)-norm of ``f`` over a sample cloud.

    growth term plus the largest Hoelder ratio over sampled pairs.  Pairs are
    far pairs (two cloud points) and near pairs (a cloud point and a
    perturbation at a log-uniform scale in [1e-3, 1e-1]).  They are drawn in
    fixed-size chunks from one stream, so a larger ``pairs`` only adds pairs
    and the bound is nondecreasing in ``pairs``.  Clouds of at most 64 points
    also contribute every distinct pair; a single point has no pair term.
    """
    samples = cloud.samples if hasattr(cloud, "samples") else cloud
    x = _as_batch(f, samples)
    n = x.shape[0]
    if n == 0:
        raise FunctionalError("empty cloud")
    best = growth_term(f, x, p)
    if n == 1:  # no pairs, so no Hoelder term
        return best
    ratio = 0.0
    if 1 < n <= _EXHAUSTIVE:
        i, j = np.triu_indices(n, 1)
        ratio = float(np.max(holder_ratio(f, x[i], x[j], p, gamma)))
    gen = np.random.default_rng(rng_seed)
    done = 0
    while done < pairs:
        i = gen.integers(0, n, _CHUNK)
        j = gen.integers(0, n, _CHUNK)
        near = gen.random(_CHUNK) < 0.5
        scale = 10.0 ** gen.uniform(-3.0, -1.0, _CHUNK)
        z = gen.standard_normal((_CHUNK,) + x.shape[1:])
        take = min(_CHUNK, pairs - done)
        sl = slice(0, take)
        a = x[i[sl]]
        shift = scale[sl].reshape((take,) + (1,) * (x.ndim - 1)) * z[sl]
        b = np.where(near[sl].reshape((take,) + (1,) * (x.ndim - 1)), a + shift, x[j[sl]])
        ratio = max(ratio, float(np.max(holder_ratio(f, a, b, p, gamma))))
        done += take
    return best + ratio


# --------------------------------------------------------------------------
# registry

def _coordinate(p):
    i = int(p.get("i", 0))
    return TestFunctional("coordinate", lambda x: x[:, i], p=2.0, gamma=1.0, params={"i": i})


def _norm_sq(p):
    return TestFunctional("norm_sq", lambda x: np.einsum("ri,ri->r", x.reshape(x.shape[0], -1),
                                                         x.reshape(x.shape[0], -1)), p=4.0)


def _mode(p):
    j = int(p.get("j", 1))
    if j < 1:
        raise FunctionalError("mode index j starts at 1")
    return TestFunctional("mode", lambda x: x[:, j - 1], p=2.0, params={"j": j})


def _segment_head(p):
    i = int(p.get("i", 0))
    return TestFunctional("segment_head", lambda s: s[:, -1, i], p=2.0, state_ndim=2,
                          params={"i": i})


def _segment_integral(p):
    """Integral of the interpolated segment against the uniform measure (trapezoid)."""
    i = int(p.get("i", 0))

    def fn(s):
        w = np.full(s.shape[1], 1.0)
        w[0] = w[-1] = 0.5
        return s[:, :, i] @ (w / w.sum())

    return TestFunctional("segment_integral", fn, p=2.0, state_ndim=2, params={"i": i})


def _clipped(p):
    g = float(p.get("gamma", 0.5))
    i = int(p.get("i", 0))

    def fn(x):
        v = x[:, i]
        return np.minimum(1.0, np.abs(v) ** g) * np.sign(v)

    return TestFunctional("clipped", fn, p=1.0, gamma=g, params={"gamma": g, "i": i})


_REGISTRY = {
    "coordinate": _coordinate,
    "norm_sq": _norm_sq,
    "mode": _mode,
    "segment_head": _segment_head,
    "segment_integral": _segment_integral,
    "clipped": _clipped,
}
FUNCTIONAL_NAMES = tuple(_REGISTRY)


def builtin_functional(name: str, params: Mapping[str, float] | None = None) -> TestFunctional:
    if name not in _REGISTRY:
        raise FunctionalError(f"unknown functional {name!r}; expected one of {', '.join(_REGISTRY)}")
    params = dict(params or {})
    f = _REGISTRY[name](params)
    p = float(params.get("p", f.p))
    gamma = float(params.get("gamma", f.gamma))
    mu = params.get("mu")
    return TestFunctional(f.name, f.fn, p, gamma, f.state_ndim,
                          None if mu is None else float(mu), f.params)
