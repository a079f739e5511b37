"""One-step maps of the discretizations and a blocked multi-replica driver.

Kernels act on batches: ``kernel(model, x, dw, tau, cfg) -> (y, ok)`` where
``x`` has a leading replica axis, ``dw`` holds the Brownian increments for the
step and ``ok`` flags replicas whose implicit solve converged (``None`` for
explicit schemes).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter

from . import rng
from .models import ModelSpec, SfdeModel, SodeModel, SpectralSpdeModel

OVERFLOW_THRESHOLD = 1e10


class SchemeError(RuntimeError):
    pass


class NewtonDivergence(SchemeError):
    """Implicit solve did not reach the residual tolerance."""


class OverflowDetected(SchemeError, ArithmeticError):
    """A state entry became non-finite or exceeded the overflow threshold."""


@dataclass(frozen=True)
class StepSize:
    tau: float
    h: float = 0.0
    alpha: tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau={self.tau} outside (0, 1]")
        if not 0 <= self.h <= 1:
            raise ValueError(f"h={self.h} outside [0, 1]")
        if not math.isfinite(self.size):
            raise ValueError("|Delta^alpha| is not finite")

    @property
    def size(self) -> float:
        """|Delta^alpha| = h^alpha1 + tau^alpha2 (the h term vanishes for h = 0)."""
        a1, a2 = self.alpha
        hterm = self.h ** a1 if self.h > 0 else 0.0
        return hterm + self.tau ** a2


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-12
    max_iter: int = 50
    damping: float = 1.0

    def __post_init__(self):
        if not self.abs_tol > 0 or self.max_iter < 1 or not 0 < self.damping <= 1:
            raise ValueError("need abs_tol > 0, max_iter >= 1, damping in (0, 1]")


@dataclass
class PathState:
    """Current state of a batch of trajectories at step ``k``.

    The noise address of the next step is ``(seed, replicas[i], k)``.
    """

    k: int
    tau: float
    value: np.ndarray
    seed: int = 0
    replicas: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        if self.replicas is None:
            self.replicas = np.arange(self.value.shape[0])
        self.replicas = np.atleast_1d(np.asarray(self.replicas, dtype=np.int64))
        if self.replicas.size != self.value.shape[0]:
            raise ValueError("one replica id per state row required")

    @classmethod
    def start(cls, value, tau, seed=0, replica=0) -> "PathState":
        """Single-trajectory state from an unbatched value."""
        v = np.asarray(value, dtype=float)[None, ...]
        return cls(k=0, tau=tau, value=v, seed=seed, replicas=np.array([replica]))

    @property
    def t(self) -> float:
        return self.k * self.tau

    @property
    def rng_state(self):
        return (self.seed, tuple(int(r) for r in self.replicas), self.k)

    def advanced(self, value) -> "PathState":
        return PathState(self.k + 1, self.tau, value, self.seed, self.replicas)


# --------------------------------------------------------------------------
# kernels

def _newton(residual, solve, y, cfg: NewtonConfig):
    """Damped Newton on rows of ``y``; rows stop moving once converged."""
    r = y.shape[0]
    conv = np.zeros(r, dtype=bool)
    for _ in range(cfg.max_iter + 1):
        g = residual(y)
        err = np.max(np.abs(g.reshape(r, -1)), axis=1)
        conv = err <= cfg.abs_tol
        if conv.all():
            return y, conv
        if _ == cfg.max_iter:
            break
        step = solve(y, g)
        mask = conv.reshape((r,) + (1,) * (y.ndim - 1))
        y = np.where(mask, y, y - cfg.damping * step)
    return y, conv


def bem_kernel(model: SodeModel, x, dw, tau, cfg: NewtonConfig):
    """Y' = Y + b(Y') tau + sigma(Y) dW, Newton from the explicit predictor."""
    rhs = x + model.noise_term(x, dw)
    y0 = rhs + tau * model.b(x)
    d = model.dim

    def residual(y):
        return y - tau * model.b(y) - rhs

    if d == 1:
        def solve(y, g):
            return g / (1.0 - tau * model.jac(y)[:, :, 0])
    else:
        eye = np.eye(d)

        def solve(y, g):
            return np.linalg.solve(eye - tau * model.jac(y), g[..., None])[..., 0]

    return _newton(residual, solve, y0, cfg)


def em_kernel(model, x, dw, tau, cfg=None):
    """Explicit Euler-Maruyama; for delay models the segment window shifts."""
    if isinstance(model, SfdeModel):
        head = x[:, -1, :]
        new = head + tau * model.b(x) + np.einsum("rij,rj->ri", model.sigma(x), dw)
        return np.concatenate([x[:, 1:, :], new[:, None, :]], axis=1), None
    return x + tau * model.b(x) + model.noise_term(x, dw), None


def spde_expeuler_kernel(model: SpectralSpdeModel, x, dw, tau, cfg=None):
    """Y' = S(tau)(Y + P F(Y) tau + dW^h), S(tau) = exp(-lam tau) per mode."""
    decay = np.exp(-model.lam * tau)
    return decay * (x + tau * model.F(x) + model.noise_std * dw), None


def spde_bem_kernel(model: SpectralSpdeModel, x, dw, tau, cfg: NewtonConfig):
    """(1 + lam tau) Y' - tau P F(Y') = Y + dW^h.

    The linear part is inverted exactly; Newton starts from the linearly
    implicit predictor (F explicit, A implicit).
    """
    diag = 1.0 + tau * model.lam
    rhs = x + model.noise_std * dw
    y0 = (rhs + tau * model.F(x)) / diag
    dmat = np.diag(diag)

    def residual(y):
        return diag * y - tau * model.F(y) - rhs

    def solve(y, g):
        jac = dmat - tau * model.DF(y)
        return np.linalg.solve(jac, g[..., None])[..., 0]

    return _newton(residual, solve, y0, cfg)


def _linear_factor(name, model, tau):
    """Per-step multiplier for OU-type models (b = -theta x, additive noise)."""
    if not isinstance(model, SodeModel) or model.linear_rate is None or not model.additive:
        return None
    theta = model.linear_rate
    if name == "bem":
        return 1.0 / (1.0 + theta * tau), True
    if name == "em":
        return 1.0 - theta * tau, False
    return None


def linear_block(name, model, x, dws, tau):
    """Whole block of states ``(R, nb, d)`` for a linear recursion, or None.

    BEM on ``b = -theta x`` is ``y' = (y + sigma dW) / (1 + theta tau)`` and EM
    is ``y' = (1 - theta tau) y + sigma dW``; both are first-order filters run
    along the step axis.
    """
    fac = _linear_factor(name, model, tau)
    if fac is None:
        return None
    phi, implicit = fac
    u = dws @ model._sigma0.T
    if implicit:
        u = phi * u
    out, _ = lfilter([1.0], [1.0, -phi], u, axis=1, zi=phi * x[:, None, :])
    return out


@dataclass(frozen=True)
class Scheme:
    name: str
    families: tuple[str, ...]
    kernel: Callable
    implicit: bool = False
    width: Callable[[ModelSpec], int] | None = None

    def noise_width(self, model) -> int:
        return self.width(model) if self.width else model.noise_width


SCHEMES: dict[str, Scheme] = {
    "bem": Scheme("bem", ("sode",), bem_kernel, implicit=True),
    "em": Scheme("em", ("sode",), em_kernel),
    "sfde_em": Scheme("sfde_em", ("sfde",), em_kernel),
    "spde_expeuler": Scheme("spde_expeuler", ("spde",), spde_expeuler_kernel),
    "spde_bem": Scheme("spde_bem", ("spde",), spde_bem_kernel, implicit=True),
}


def get_scheme(name: str, model: ModelSpec | None = None) -> Scheme:
    if name not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}")
    scheme = SCHEMES[name]
    if model is not None and model.family not in scheme.families:
        raise ValueError(f"scheme {name!r} does not apply to {model.family} model {model.name!r}")
    return scheme


def _check_tau(model, tau):
    if isinstance(model, SfdeModel) and not math.isclose(tau, model.tau, rel_tol=1e-12):
        raise ValueError(f"delay model requires tau = delta0/Nseg = {model.tau}, got {tau}")


def _finite_rows(y) -> np.ndarray:
    flat = np.abs(y.reshape(y.shape[0], -1))
    return np.all(flat <= OVERFLOW_THRESHOLD, axis=1)


def _single_step(scheme_name, model, state: PathState, step: StepSize, cfg, dw):
    scheme = get_scheme(scheme_name, model)
    _check_tau(model, step.tau)
    if dw is None:
        w = scheme.noise_width(model)
        dw = np.stack([np.sqrt(step.tau) * rng.normals(state.seed, int(r), w, state.k, state.k + 1)[0]
                       for r in state.replicas])
    dw = np.asarray(dw, dtype=float).reshape(state.value.shape[0], -1)
    y, ok = scheme.kernel(model, state.value, dw, step.tau, cfg or NewtonConfig())
    if ok is not None and not ok.all():
        raise NewtonDivergence(f"{scheme_name}: residual above tolerance at step {state.k}")
    if not _finite_rows(y).all():
        raise OverflowDetected(f"{scheme_name}: state overflow at step {state.k + 1}")
    return state.advanced(y)


def bem_step(model: SodeModel, state: PathState, step: StepSize,
             cfg: NewtonConfig | None = None, dW=None) -> PathState:
    return _single_step("bem", model, state, step, cfg, dW)


def em_step(model, state: PathState, step: StepSize, dW=None) -> PathState:
    name = "sfde_em" if isinstance(model, SfdeModel) else "em"
    return _single_step(name, model, state, step, None, dW)


def spde_expeuler_step(model: SpectralSpdeModel, state: PathState, step: StepSize, dW=None) -> PathState:
    _check_h(model, step)
    return _single_step("spde_expeuler", model, state, step, None, dW)


def spde_bem_step(model: SpectralSpdeModel, state: PathState, step: StepSize,
                  cfg: NewtonConfig | None = None, dW=None) -> PathState:
    _check_h(model, step)
    return _single_step("spde_bem", model, state, step, cfg, dW)


def _check_h(model, step):
    if step.h and not math.isclose(step.h, model.h, rel_tol=1e-9):
        raise ValueError(f"h={step.h} inconsistent with N={model.n_modes}")


def coupled_step(stepper: Callable, model, s1: PathState, s2: PathState, step: StepSize,
                 dW=None, **kwargs):
    """Advance two states with identical noise increments (synchronous coupling).

    The shared increment is read at the address of ``s1``.
    """
    if s1.k != s2.k or s1.tau != s2.tau:
        raise ValueError(f"mismatched clocks: k={s1.k} vs k={s2.k}")
    if dW is None:
        width = model.noise_width
        dW = np.stack([np.sqrt(step.tau) * rng.normals(s1.seed, int(r), width, s1.k, s1.k + 1)[0]
                       for r in s1.replicas])
    return stepper(model, s1, step, dW=dW, **kwargs), stepper(model, s2, step, dW=dW, **kwargs)


def segment_eval(model: SfdeModel, segment, theta: float):
    """Linear interpolation of a stored segment at ``theta`` in [-delay, 0].

    ``segment`` is ``(n_seg + 1, d)`` or batched ``(R, n_seg + 1, d)``.
    """
    delay = float(model.delay)
    if not -delay - 1e-15 <= theta <= 1e-15:
        raise ValueError(f"theta={theta} outside the delay window [{-delay}, 0]")
    seg = np.asarray(segment, dtype=float)
    pos = (theta + delay) / model.tau
    if abs(pos - round(pos)) <= 1e-9:  # a grid node up to rounding
        pos = float(round(pos))
    j = min(int(math.floor(pos)), model.n_seg - 1)
    j = max(j, 0)
    w = pos - j
    if w <= 0.0:
        return seg[..., j, :].copy()
    if w >= 1.0:
        return seg[..., j + 1, :].copy()
    return (1.0 - w) * seg[..., j, :] + w * seg[..., j + 1, :]


# --------------------------------------------------------------------------
# blocked driver

@dataclass
class RunResult:
    values: np.ndarray | None
    final: PathState
    failed: np.ndarray
    failure_step: np.ndarray
    failure_kind: list
    steps: int

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())


def initial_batch(model: ModelSpec, x0, replicas: int) -> np.ndarray:
    """Broadcast an initial value (or ``None`` for the model default) to R rows."""
    if x0 is None:
        if isinstance(model, SfdeModel):
            return model.initial_state(replicas)
        return model.zero_state(replicas)
    x0 = np.asarray(x0, dtype=float)
    shape = model.state_shape
    if x0.shape == shape or x0.size in (1, int(np.prod(shape))):
        x0 = np.broadcast_to(x0.reshape(shape) if x0.size > 1 else x0.reshape(()), shape)
        return np.broadcast_to(x0, (replicas,) + shape).copy()
    if x0.shape == (replicas,) + shape:
        return x0.copy()
    raise ValueError(f"initial value of shape {x0.shape} incompatible with state {shape}")


def run(model: ModelSpec, scheme: Scheme | str, step: StepSize | float, n_steps: int,
        x0=None, *, seed: int = 0, replicas: Sequence[int] | int = 1,
        observe: Callable | None = None, every: int = 1, sink: Callable | None = None,
        cfg: NewtonConfig | None = None, substeps: int = 1,
        noise: Callable | None = None, block: int = 1024,
        on_failure: str = "raise", noise_fast: bool = True, k0: int = 0) -> RunResult:
    """Advance a batch of replicas ``n_steps`` steps.

    ``observe(states) -> (R, ...)`` is recorded at every step index that is a
    multiple of ``every`` (including 0).  Observations are returned stacked
    along axis 1 unless ``sink(first_index, block_values)`` is given, in which
    case they are streamed and not stored.  ``noise(ka, kb)`` overrides the
    default keyed Brownian increments.  With ``on_failure="mark"`` failing
    replicas are frozen at zero, their later observations are NaN, and the
    failure is recorded instead of raised.  OU-type models under BEM or EM
    are advanced a block at a time by their exact linear recursion unless
    ``noise_fast=False``; a block that would overflow is replayed step by step.
    ``k0`` offsets the noise addresses so a run can continue an earlier one;
    observation indices stay relative to the start of this call.
    """
    if isinstance(scheme, str):
        scheme = get_scheme(scheme, model)
    if not isinstance(step, StepSize):
        step = StepSize(tau=float(step))
    tau = step.tau
    _check_tau(model, tau)
    cfg = cfg or NewtonConfig()
    ids = np.arange(replicas) if isinstance(replicas, int) else np.asarray(replicas, dtype=np.int64)
    r = ids.size
    x = initial_batch(model, x0, r)
    width = scheme.noise_width(model)
    if noise is None:
        def noise(ka, kb):
            return rng.brownian_increments(seed, ids, width, tau, k0 + ka, k0 + kb, substeps)

    fast = noise_fast and _linear_factor(scheme.name, model, tau) is not None
    failed = np.zeros(r, dtype=bool)
    fstep = np.full(r, -1, dtype=np.int64)
    fkind: list = [None] * r
    stored: list = []
    buf: list = []
    buf_start = 0

    def record(k, state):
        nonlocal buf_start
        if observe is None or k % every:
            return
        v = np.asarray(observe(state), dtype=float)
        if failed.any():
            v = v.copy()
            v[failed] = np.nan
        if not buf:
            buf_start = k // every
        buf.append(v)

    def flush():
        if not buf:
            return
        arr = np.stack(buf, axis=1)
        buf.clear()
        if sink is not None:
            sink(buf_start, arr)
        else:
            stored.append(arr)

    record(0, x)
    k = 0
    while k < n_steps:
        nb = min(block, n_steps - k)
        dws = noise(k, k + nb)
        if fast and not failed.any():
            states = linear_block(scheme.name, model, x, dws, tau)
            if np.all(np.abs(states) <= OVERFLOW_THRESHOLD):
                if observe is not None:
                    first = (-(k + 1)) % every
                    idx = np.arange(first, nb, every)
                    if idx.size:
                        sel = states[:, idx]
                        v = np.asarray(observe(sel.reshape((-1,) + sel.shape[2:])), dtype=float)
                        v = v.reshape((r, idx.size) + v.shape[1:])
                        if not buf:
                            buf_start = (k + 1 + first) // every
                        buf.extend(np.moveaxis(v, 1, 0))
                x = states[:, -1].copy()
                k += nb
                flush()
                continue
        for i in range(nb):
            y, ok = scheme.kernel(model, x, dws[:, i], tau, cfg)
            good = _finite_rows(y)
            if ok is not None:
                newton_bad = ~ok & ~failed
            else:
                newton_bad = np.zeros(r, dtype=bool)
            over_bad = ~good & ~failed
            if newton_bad.any() or over_bad.any():
                if on_failure == "raise":
                    if over_bad.any():
                        raise OverflowDetected(f"{scheme.name}: overflow at step {k + 1}")
                    raise NewtonDivergence(f"{scheme.name}: Newton failed at step {k + 1}")
                for j in np.flatnonzero(newton_bad | over_bad):
                    fstep[j] = k + 1
                    fkind[j] = "overflow" if over_bad[j] else "newton"
                failed |= newton_bad | over_bad
            if failed.any():
                y = np.where(failed.reshape((r,) + (1,) * (y.ndim - 1)), 0.0, y)
            x = y
            k += 1
            record(k, x)
        flush()
    flush()
    values = None
    if observe is not None and sink is None and stored:
        values = np.concatenate(stored, axis=1)
    final = PathState(k=k0 + n_steps, tau=tau, value=x, seed=seed, replicas=ids)
    return RunResult(values, final, failed, fstep, fkind, n_steps * r)


def write_trajectory_csv(path, values: np.ndarray, tau: float, k0: int = 0):
    """Dump a single trajectory ``(n, m)`` as ``k,t,value_0..value_{m-1}``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t"] + [f"value_{j}" for j in range(values.shape[1])])
        for i, row in enumerate(values):
            k = k0 + i
            w.writerow([k, repr(k * tau)] + [repr(float(v)) for v in row])
