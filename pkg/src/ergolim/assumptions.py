"""Empirical checks of the moment bound, coupled contraction and strong convergence."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .measures import MeasureError, mixing_fit
from .models import SfdeModel
from .schemes import StepSize, get_scheme, initial_batch, run, segment_eval


class CheckError(ValueError):
    pass


def _step(step) -> StepSize:
    return step if isinstance(step, StepSize) else StepSize(float(step))


def _checkpoints(horizon_k: int, count: int = 16) -> np.ndarray:
    """``count`` evenly spaced step indices in [1, horizon_k], always ending at horizon_k."""
    pts = np.unique(np.round(np.linspace(0, horizon_k, count + 1)[1:]).astype(np.int64))
    return pts[pts >= 1]


def _norm_q(model, states, q):
    return model.norm(states) ** q


# --------------------------------------------------------------------------
# moment bound

@dataclass
class MomentReport:
    q: float
    rows: list = field(default_factory=list)
    passed: bool = True
    reason: str = ""
    tolerance: float = 0.05

    def to_dict(self):
        return {"q": self.q, "rows": self.rows, "passed": self.passed, "reason": self.reason,
                "tolerance": self.tolerance}


def check_moment_bound(model, scheme, step, q: float = 2.0, horizon_k: int = 1000,
                       replicas: int = 4000, initials=(0.0,), seed: int = 0,
                       checkpoints: int = 16, tolerance: float = 0.05) -> MomentReport:
    """sup_k E|Y_k|^q from each initial value, and a growth-trend verdict.

    The trend is the least-squares slope of E|Y|^q against t over the second
    half of the checkpoints, normalized by the span of that half and by the
    mean level there.  Any overflow is a definitive failure.
    """
    if not q >= 2:
        raise CheckError("moment exponent q must be >= 2")
    step = _step(step)
    scheme = get_scheme(scheme, model) if isinstance(scheme, str) else scheme
    pts = _checkpoints(horizon_k, checkpoints)
    rep = MomentReport(q=q, tolerance=tolerance)
    qt = model.meta.q_tilde
    for x0 in initials:
        obs = lambda s: _norm_q(model, s, q)
        res = run(model, scheme, step, horizon_k, x0, seed=seed, replicas=replicas,
                  observe=obs, on_failure="mark")
        x_norm = float(model.norm(initial_batch(model, x0, 1))[0])
        row = {"x0_norm": x_norm, "failed": res.n_failed}
        if res.n_failed:
            kinds = sorted({k for k in res.failure_kind if k})
            row.update({"passed": False, "reason": f"{res.n_failed} replicas failed ({', '.join(kinds)})",
                        "first_failure_step": int(res.failure_step[res.failed].min())})
            rep.rows.append(row)
            rep.passed = False
            rep.reason = "overflow" if "overflow" in kinds else "newton divergence"
            continue
        means = res.values[:, pts].mean(axis=0)
        t = pts * step.tau
        half = t >= t[len(t) // 2]
        th, mh = t[half], means[half]
        slope = float(np.polyfit(th, mh, 1)[0]) if th.size >= 2 else 0.0
        level = float(np.mean(mh))
        trend = slope * float(th[-1] - th[0]) / level if level > 0 else 0.0
        ok = trend <= tolerance
        row.update({"t": t.tolist(), "moments": means.tolist(), "sup": float(means.max()),
                    "bound_ratio": float(means.max() / (1.0 + x_norm ** (qt * q))),
                    "normalized_trend": trend, "passed": bool(ok)})
        rep.rows.append(row)
        if not ok:
            rep.passed = False
            rep.reason = "moment grows over the horizon"
    return rep


# --------------------------------------------------------------------------
# contraction

@dataclass
class ContractionReport:
    table: list
    rate: float
    r2: float
    passed: bool
    notes: list = field(default_factory=list)
    n_used: int = 0

    def to_dict(self):
        return {"table": self.table, "rate": self.rate, "r2": self.r2, "passed": self.passed,
                "notes": self.notes, "n_used": self.n_used}


def check_contraction(model, scheme, step, pairs, horizon_k: int = 500, replicas: int = 100,
                      seed: int = 0, every: int = 1, r2_min: float = 0.95) -> ContractionReport:
    """Synchronously coupled trajectories from each pair (x, y).

    The coupled RMS distance, normalized by |x - y| and averaged over pairs,
    is fitted as exp(-c t).  Pairs with x = y are excluded.
    """
    step = _step(step)
    ids = np.arange(replicas)
    notes = []
    sq = None
    used = 0
    for x, y in pairs:
        xb = initial_batch(model, x, replicas)
        yb = initial_batch(model, y, replicas)
        d0 = float(model.norm((xb - yb)[:1])[0])
        if d0 == 0.0:
            notes.append(f"pair ({_short(x)}, {_short(y)}) excluded: identical initial states")
            continue
        both = np.concatenate([xb, yb])
        # the two halves share replica ids, hence noise
        res = run(model, scheme, step, horizon_k, both, seed=seed,
                  replicas=np.concatenate([ids, ids]), every=every,
                  observe=lambda s: s.copy())
        v = res.values
        diff = v[:replicas] - v[replicas:]
        dist2 = model.norm(diff.reshape((-1,) + diff.shape[2:])).reshape(replicas, -1) ** 2
        rms = np.sqrt(dist2.mean(axis=0)) / d0
        sq = rms ** 2 if sq is None else sq + rms ** 2
        used += 1
    if not used:
        return ContractionReport([], 0.0, 0.0, False, notes + ["no usable pairs"], 0)
    rms = np.sqrt(sq / used)
    t = np.arange(rms.size) * every * step.tau
    table = [[float(a), float(b)] for a, b in zip(t, rms)]
    try:
        fit = mixing_fit(table)
    except MeasureError as exc:
        return ContractionReport(table, 0.0, 0.0, False, notes + [str(exc)], 0)
    ok = fit.r2 >= r2_min and fit.rate > 0
    return ContractionReport(table, fit.rate, fit.r2, bool(ok), notes, fit.n_used)


def _short(x):
    a = np.asarray(x)
    return repr(float(a)) if a.size == 1 else f"array{a.shape}"


# --------------------------------------------------------------------------
# strong order

@dataclass
class OrderReport:
    taus: list
    errors: list
    slope: float
    intercept: float
    reference: str
    passed: bool | None = None

    def to_dict(self):
        return {"taus": self.taus, "errors": self.errors, "slope": self.slope,
                "intercept": self.intercept, "reference": self.reference, "passed": self.passed}


def _fit_order(taus, errors):
    t = np.asarray(taus, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.all(e == 0):
        return 0.0, -math.inf
    if np.any(e <= 0):
        raise CheckError("nonpositive strong error on part of the grid")
    slope, icpt = np.polyfit(np.log(t), np.log(e), 1)
    return float(slope), float(icpt)


def _per_checkpoint(T, tau, count):
    n = T / tau
    k_total = int(round(n))
    if abs(n - k_total) > 1e-9 * n:
        raise CheckError(f"tau={tau} does not divide the horizon T={T}")
    pts = _checkpoints(k_total, count)
    return k_total, pts


def check_strong_order(model, scheme, taus, T: float = 1.0, replicas: int = 200, seed: int = 0,
                       reference: str = "exact", x0=None, checkpoints: int = 16,
                       fine_factor: int = 64, window=None) -> OrderReport:
    """RMS error against a reference solution at checkpoints, max over time, vs tau.

    ``reference="exact"`` is available for the OU model: the exact transition
    is sampled jointly with the Brownian increments the scheme sees.
    ``scheme="exact"`` with that reference returns zero errors.  Otherwise
    the reference is the same scheme at ``min(taus) / fine_factor`` driven by
    the fine increments whose sums drive every coarse run.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    if len(taus) < 2:
        raise CheckError("degenerate grid: need at least two step sizes")
    if reference == "exact":
        errors = _order_exact(model, scheme, taus, T, replicas, seed, x0, checkpoints)
    elif reference == "fine":
        errors = _order_fine(model, scheme, taus, T, replicas, seed, x0, checkpoints, fine_factor)
    else:
        raise CheckError(f"unknown reference {reference!r}")
    slope, icpt = _fit_order(taus, errors)
    passed = None
    if window is not None:
        passed = bool(window[0] <= slope <= window[1])
    return OrderReport(taus, errors, slope, icpt, reference, passed)


def _order_exact(model, scheme, taus, T, replicas, seed, x0, count):
    theta, sigma = oracles.ou_params(model)
    name = scheme if isinstance(scheme, str) else scheme.name
    x0 = np.zeros(model.dim) + (1.0 if x0 is None else np.asarray(x0, dtype=float))
    errors = []
    for tau in taus:
        k_total, pts = _per_checkpoint(T, tau, count)
        exact, approx = oracles.coupled_ou_paths(theta, sigma, tau, k_total, x0, seed, replicas,
                                                 scheme=name, d=model.dim)
        diff = exact[:, pts] - approx[:, pts]
        rms = np.sqrt(np.mean(np.sum(diff * diff, axis=2), axis=0))
        errors.append(float(rms.max()))
    return errors


def _order_fine(model, scheme, taus, T, replicas, seed, x0, count, factor):
    tau_ref = taus[-1] / factor
    if isinstance(model, SfdeModel):
        return _order_fine_delay(model, scheme, taus, T, replicas, seed, count, factor)
    k_ref, _ = _per_checkpoint(T, tau_ref, count)
    errors = []
    ref_cache = {}
    for tau in taus:
        k_total, pts = _per_checkpoint(T, tau, count)
        sub = int(round(tau / tau_ref))
        coarse = run(model, scheme, tau, k_total, x0, seed=seed, replicas=replicas,
                     substeps=sub, observe=lambda s: s.copy())
        fine_pts = pts * sub
        key = tuple(fine_pts.tolist())
        if key not in ref_cache:
            fine = _fine_states(model, scheme, tau_ref, k_ref, x0, seed, replicas, fine_pts)
            ref_cache[key] = fine
        fine = ref_cache[key]
        diff = (coarse.values[:, pts] - fine).reshape(replicas, pts.size, -1)
        rms = np.sqrt(np.mean(np.sum(diff * diff, axis=2), axis=0))
        errors.append(float(rms.max()))
    return errors


def _fine_states(model, scheme, tau_ref, k_ref, x0, seed, replicas, fine_pts):
    want = set(int(p) for p in fine_pts)
    store = {}

    def sink(first, vals):
        for i in range(vals.shape[1]):
            if first + i in want:
                store[first + i] = vals[:, i]

    run(model, scheme, tau_ref, k_ref, x0, seed=seed, replicas=replicas,
        observe=lambda s: s.copy(), sink=sink)
    return np.stack([store[int(p)] for p in fine_pts], axis=1)


def _order_fine_delay(model, scheme, taus, T, replicas, seed, count, factor):
    """Delay models: tau = delta0 / Nseg, so each tau is a resolution of the segment grid.

    Errors compare the coarse segment at its nodes and cell midpoints with the
    fine segment at the same times.
    """
    base = model.n_seg * model.tau
    errors = []
    tau_ref = taus[-1] / factor
    n_ref = int(round(base / tau_ref))
    fine_model = model.with_resolution(n_ref)
    k_ref, _ = _per_checkpoint(T, fine_model.tau, count)
    for tau in taus:
        n_seg = int(round(base / tau))
        cm = model.with_resolution(n_seg)
        k_total, pts = _per_checkpoint(T, cm.tau, count)
        sub = int(round(cm.tau / fine_model.tau))
        coarse = run(cm, scheme, cm.tau, k_total, None, seed=seed, replicas=replicas,
                     substeps=sub, observe=lambda s: s.copy())
        fine = _fine_states(fine_model, scheme, fine_model.tau, k_ref, None, seed, replicas, pts * sub)
        worst = 0.0
        for j, p in enumerate(pts):
            cseg = coarse.values[:, p]
            fseg = fine[:, j]
            thetas = np.concatenate([cm.grid, 0.5 * (cm.grid[1:] + cm.grid[:-1])])
            err2 = 0.0
            for th in thetas:
                diff = segment_eval(cm, cseg, th) - segment_eval(fine_model, fseg, th)
                err2 = max(err2, float(np.mean(np.sum(diff * diff, axis=-1))))
            worst = max(worst, math.sqrt(err2))
        errors.append(worst)
    return errors
