"""Experiment pipelines: lln, clt, invariant, mixing, order, assumptions."""
from __future__ import annotations

import math
import time

import numpy as np

from .. import assumptions as checks
from .. import estimators as est
from .. import measures, oracles, stats
from ..functionals import builtin_functional
from ..models import SfdeModel, SodeModel, SpectralSpdeModel, validate_hypotheses
from ..schemes import StepSize, get_scheme, run
from .config import ExperimentConfig, build_model
from .parallel import chunk_map
from .report import Report, write_csv


# --------------------------------------------------------------------------
# oracles

def oracle_info(model, scheme: str, f, tau: float) -> dict:
    """Known limits for (model, functional): mu of the SDE, mu of the scheme, and v^2.

    Entries are None when no closed form is available.  A ``mu`` given on
    the functional overrides both limits.
    """
    info = {"mu_exact": None, "mu_scheme": None, "v2": None}
    name = f.name
    if isinstance(model, SodeModel) and model.name == "ou":
        theta, sigma = oracles.ou_params(model)
        d = model.dim
        if name == "coordinate":
            info.update(mu_exact=0.0, mu_scheme=0.0,
                        v2=oracles.long_run_variance("exact", theta, sigma))
        elif name == "norm_sq":
            info["mu_exact"] = d * oracles.stationary_variance("exact", theta, sigma)
            if scheme in ("bem", "em"):
                info["mu_scheme"] = d * oracles.stationary_variance(scheme, theta, sigma, tau)
            info["v2"] = d * oracles.long_run_variance("exact", theta, sigma, functional="x2")
    elif isinstance(model, SfdeModel) and model.name == "linear_delay":
        if name in ("segment_head", "segment_integral"):
            info.update(mu_exact=0.0, mu_scheme=0.0)
        if name == "segment_head":
            p = model.params
            info["v2"] = oracles.delay_long_run_variance(float(p["a"]), float(p["b"]),
                                                         float(p["sigma"]))
    elif isinstance(model, SpectralSpdeModel):
        if name in ("mode", "coordinate"):
            info.update(mu_exact=0.0, mu_scheme=0.0)
        elif name == "norm_sq" and model.name == "stochastic_heat":
            lam, qs = model.lam, model.noise_scale ** 2 * model.q
            info["mu_exact"] = float(np.sum(qs / (2 * lam)))
            if scheme == "spde_bem":
                info["mu_scheme"] = float(np.sum(qs / (2 * lam + lam * lam * tau)))
            elif scheme == "spde_expeuler":
                e = np.exp(-2 * lam * tau)
                info["mu_scheme"] = float(np.sum(qs * tau * e / (1 - e)))
    if f.mu is not None:
        info["mu_exact"] = info["mu_scheme"] = f.mu
    return info


# --------------------------------------------------------------------------
# helpers

class _Setup:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = build_model(cfg.model)
        self.scheme = get_scheme(cfg.scheme, self.model)
        fparams = {k: v for k, v in cfg.functional.items() if k != "name"}
        self.f = builtin_functional(cfg.functional["name"], fparams)
        self.tau = cfg.tau if cfg.tau is not None else (
            self.model.tau if isinstance(self.model, SfdeModel) else None)


def _chunked(cfg, threads, fn):
    """Run ``fn(ids) -> dict`` over fixed chunks; concatenate and collect failures.

    ``fn`` returns arrays with one row per id plus ``failed`` and ``kinds``.
    """
    res = chunk_map(cfg.replicas, cfg.seed, lambda seed, ids: fn(ids), cfg.chunk, threads)
    parts = {}
    failures = {}
    chunks = -(-cfg.replicas // cfg.chunk)
    for c in range(chunks):
        ids = np.arange(c * cfg.chunk, min(cfg.replicas, (c + 1) * cfg.chunk))
        out = res.results[c]
        if out is None:
            for i in ids:
                failures[int(i)] = res.failures[c]
            continue
        for j, i in enumerate(ids):
            if out["failed"][j]:
                failures[int(i)] = out["kinds"][j] or "failed"
        for key, val in out.items():
            if key in ("failed", "kinds"):
                continue
            parts.setdefault(key, []).append((ids, val))
    merged = {}
    for key, items in parts.items():
        first = items[0][1]
        arr = np.full((cfg.replicas,) + first.shape[1:], np.nan)
        for ids, val in items:
            arr[ids] = val
        merged[key] = arr
    for i in failures:
        for arr in merged.values():
            arr[i] = np.nan
    return merged, failures


def _failure_verdict(rep: Report, cfg, failures):
    frac = len(failures) / cfg.replicas
    rep.failures = {str(k): v for k, v in sorted(failures.items())}
    rep.verdict("replica_failures", frac <= cfg.tol("failure_rate"),
                failed=len(failures), replicas=cfg.replicas, fraction=frac,
                limit=cfg.tol("failure_rate"))


def _x0(cfg):
    return None if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# --------------------------------------------------------------------------
# lln

def run_lln(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("lln", cfg.to_dict())
    ks = np.asarray(sorted(set(int(k) for k in cfg.k_grid)), dtype=np.int64)
    kmax = int(ks[-1])
    evals = np.asarray(sorted(set(ks.tolist()) | {kmax // 2}), dtype=np.int64)
    x0 = _x0(cfg)

    def fn(ids):
        means, res = est.simulate_running_means(s.model, s.scheme, s.f, s.tau, evals, ids,
                                                cfg.seed, x0, on_failure="mark")
        return {"means": means, "failed": res.failed, "kinds": res.failure_kind}

    merged, failures = _chunked(cfg, threads, fn)
    means = merged["means"]
    good = means[np.all(np.isfinite(means), axis=1)]
    info = oracle_info(s.model, cfg.scheme, s.f, s.tau)
    mu = info["mu_scheme"] if info["mu_scheme"] is not None else info["mu_exact"]
    avg = good.mean(axis=0)
    col = {int(k): j for j, k in enumerate(evals)}
    level = float(avg[col[kmax]])
    half = float(avg[col[kmax // 2]])
    drift = abs(level - half) / abs(level) if level != 0 else math.inf
    rows = []
    rep.results = {"k": ks.tolist(), "t": (ks * s.tau).tolist(),
                   "mean": [float(avg[col[int(k)]]) for k in ks],
                   "mu_reference": mu, "mu_exact": info["mu_exact"],
                   "last_half_drift": drift, "replicas_used": int(good.shape[0])}
    rep.verdict("stabilizes", drift < cfg.tol("drift_rel"), drift=drift,
                mean_k=level, mean_half=half, limit=cfg.tol("drift_rel"))
    if mu is not None:
        gridcols = [col[int(k)] for k in ks]
        fit = est.lln_rate_from_means(good[:, gridcols], ks, s.tau, mu)
        err = abs(level - mu)
        rep.results["mse"] = list(fit.mse)
        rep.results["slope"] = fit.slope
        rep.verdict("limit", err <= cfg.tol("lln_abs"), estimate=level, mu=mu, error=err,
                    limit=cfg.tol("lln_abs"))
        lo, hi = cfg.tol("slope_low"), cfg.tol("slope_high")
        rep.verdict("rate", lo <= fit.slope <= hi, slope=fit.slope, window=[lo, hi],
                    mse=list(fit.mse), t=list(fit.t))
        rows = [[int(k), float(k * s.tau), float(avg[col[int(k)]]), m]
                for k, m in zip(ks, fit.mse)]
    else:
        rows = [[int(k), float(k * s.tau), float(avg[col[int(k)]]), ""] for k in ks]
    _failure_verdict(rep, cfg, failures)
    rep.steps = cfg.replicas * (kmax - 1)
    rep.tables = {"header": ["k", "t", "mean", "mse"], "rows": rows}
    return rep


# --------------------------------------------------------------------------
# clt

def run_clt(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("clt", cfg.to_dict())
    meta = s.model.meta
    alpha = tuple(cfg.alpha) if cfg.alpha is not None else meta.alpha
    params = est.clt_params(s.tau, cfg.lam, alpha, s.f.gamma)
    k = params.k
    cond = est.check_condition(s.f.p, s.f.gamma, cfg.lam, meta, cfg.q, cfg.r)
    rep.verdict("condition", cond.passed, **cond.to_dict())
    x0 = _x0(cfg)

    # independent long run on a replica id outside the CLT batch
    n_long = cfg.long_factor * k
    long_id = np.array([cfg.replicas])
    series = run(s.model, s.scheme, s.tau, n_long - 1, x0, seed=cfg.seed, replicas=long_id,
                 observe=s.f.batch, block=8192).values[0]
    mu_hat = est.time_average(series)
    lag = cfg.lag if cfg.lag is not None else est.default_lag(series, s.tau)
    plug = est.variance_plugin(series, s.tau, lag)
    batch = cfg.batch if cfg.batch is not None else max(1, n_long // 100)
    bm = est.variance_batch_means(series, s.tau, batch)

    info = oracle_info(s.model, cfg.scheme, s.f, s.tau)
    mu = info["mu_exact"] if info["mu_exact"] is not None else mu_hat

    def fn(ids):
        acc = np.zeros(ids.size)

        def sink(first, vals):
            nonlocal acc
            acc = acc + np.sum(vals - mu, axis=1)

        res = run(s.model, s.scheme, s.tau, k - 1, x0, seed=cfg.seed, replicas=ids,
                  observe=s.f.batch, sink=sink, on_failure="mark")
        return {"stat": math.sqrt(s.tau / k) * acc, "failed": res.failed,
                "kinds": res.failure_kind}

    merged, failures = _chunked(cfg, threads, fn)
    stat_all = merged["stat"]
    st = stat_all[np.isfinite(stat_all)]
    mode = cfg.ks_variance
    if mode == "auto":
        mode = "oracle" if info["v2"] is not None else "independent"
    if mode == "oracle" and info["v2"] is None:
        raise ValueError("experiment.ks_variance: no oracle variance for this model/functional")
    v2_ref = info["v2"] if mode == "oracle" else plug.value
    sample_var = float(np.var(st, ddof=1))
    ks = stats.ks_test(st, v2_ref)
    rep.results = {
        "params": params.to_dict(), "mu_center": mu, "mu_long_run": mu_hat,
        "mu_source": "oracle" if info["mu_exact"] is not None else "independent",
        "v2_oracle": info["v2"], "v2_reference": v2_ref, "v2_source": mode,
        "sample_variance": sample_var, "sample_mean": float(np.mean(st)),
        "plugin": plug.to_dict(), "batch_means": bm.to_dict(), "long_run_steps": n_long,
        "ks": ks.to_dict(), "n_statistics": int(st.size),
    }
    if isinstance(s.model, SpectralSpdeModel):
        rep.results["coupled_h"] = params.h
        rep.results["coupled_modes"] = params.n_modes
        rep.results["model_modes"] = s.model.n_modes
    rep.verdict("ks", ks.p_value > cfg.tol("ks_alpha"), p_value=ks.p_value,
                statistic=ks.statistic, n=ks.n, v2=v2_ref, alpha=cfg.tol("ks_alpha"))
    if info["v2"] is not None:
        rel = sample_var / info["v2"] - 1.0
        rep.verdict("variance", abs(rel) <= cfg.tol("var_rel"), sample_variance=sample_var,
                    v2=info["v2"], relative_error=rel, limit=cfg.tol("var_rel"))
        if mode == "independent":
            prel = plug.value / info["v2"] - 1.0
            rep.verdict("plugin_vs_oracle", abs(prel) <= cfg.tol("oracle_rel"),
                        plugin=plug.value, v2=info["v2"], relative_error=prel,
                        limit=cfg.tol("oracle_rel"))
    _failure_verdict(rep, cfg, failures)
    rep.steps = cfg.replicas * (k - 1) + (n_long - 1)
    theo = stats.qq_data(st, v2_ref) if st.size else []
    order = np.argsort(np.argsort(st))
    rows = []
    j = 0
    for rid, v in enumerate(stat_all):
        if np.isfinite(v):
            rows.append([rid, float(v), theo[order[j]][0]])
            j += 1
    rep.tables = {"header": ["replica", "statistic", "normal_quantile"], "rows": rows}
    return rep


# --------------------------------------------------------------------------
# invariant

def run_invariant(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("invariant", cfg.to_dict())
    taus = sorted((float(t) for t in (cfg.tau_grid or [s.tau])), reverse=True)
    rows = []
    ou = isinstance(s.model, SodeModel) and s.model.name == "ou" and cfg.scheme in ("bem", "em")
    per_tau = []
    for tau in taus:
        k_burn = int(math.ceil(cfg.burn_time / tau))
        thin = max(1, int(round(cfg.thin_time / tau)))
        if ou:
            theta, sigma = oracles.ou_params(s.model)
            a, e = measures.coupled_invariant_clouds(s.model, tau, cfg.n, k_burn, thin, cfg.seed,
                                                     cfg.replicas, cfg.scheme)
            v_s = oracles.stationary_variance(cfg.scheme, theta, sigma, tau)
            v_e = oracles.stationary_variance("exact", theta, sigma)
            row = {"tau": tau, "w2": measures.wasserstein2_1d(a, e),
                   "w2_gaussian": measures.gaussian_w2(v_s, v_e),
                   "variance_gap": abs(v_s - v_e), "moment2": a.moment(2),
                   "moment2_exact_cloud": e.moment(2), "moment2_oracle": v_s,
                   "bounded_w2": measures.bounded_wasserstein(a, e, 2.0)}
        else:
            model = s.model
            if isinstance(model, SfdeModel):
                model = model.with_resolution(int(round(float(model.delay) / tau)))
            per = -(-cfg.n // cfg.replicas)
            cloud = measures.invariant_cloud(model, cfg.scheme, StepSize(tau), k_burn + per * thin,
                                             k_burn, thin, cfg.seed, _x0(cfg), cfg.replicas, s.f)
            vals = cloud.scalars()[: cfg.n]
            row = {"tau": tau, "cloud": vals, "mean": float(vals.mean()),
                   "moment2": measures.moment(vals, 2)}
        per_tau.append(row)
    if ou:
        w2 = [r["w2"] for r in per_tau]
        gap = [r["variance_gap"] for r in per_tau]
        mono = all(w2[i + 1] < w2[i] for i in range(len(w2) - 1))
        rep.verdict("w2_monotone", mono, w2=w2, taus=taus)
        if len(taus) >= 2:
            sl = _slope(taus, w2)
            gs = _slope(taus, gap)
            rep.verdict("w2_order", sl >= cfg.tol("w2_slope_min"), slope=sl,
                        minimum=cfg.tol("w2_slope_min"))
            rep.verdict("analytic_gap_slope", abs(gs - 1.0) <= cfg.tol("gap_slope_tol"),
                        slope=gs, tolerance=cfg.tol("gap_slope_tol"))
        rows = [[r["tau"], r["w2"], r["w2_gaussian"], r["moment2"], r["moment2_oracle"]]
                for r in per_tau]
        header = ["tau", "w2", "w2_gaussian", "moment2", "moment2_oracle"]
    else:
        ref = per_tau[-1]["cloud"]
        for r in per_tau:
            r["w2_vs_finest"] = measures.wasserstein2_1d(r["cloud"], ref)
            r.pop("cloud")
        rows = [[r["tau"], r["w2_vs_finest"], r["mean"], r["moment2"]] for r in per_tau]
        header = ["tau", "w2_vs_finest", "mean", "moment2"]
        rep.verdict("clouds_finite", all(math.isfinite(r["moment2"]) for r in per_tau),
                    moments=[r["moment2"] for r in per_tau])
    rep.results = {"per_tau": per_tau, "n": cfg.n}
    rep.steps = int(sum(cfg.replicas * (math.ceil(cfg.burn_time / t)
                                        + -(-cfg.n // cfg.replicas) * max(1, round(cfg.thin_time / t)))
                        for t in taus))
    rep.tables = {"header": header, "rows": rows}
    return rep


# --------------------------------------------------------------------------
# mixing / contraction

def _pairs(model, pairs):
    """Config pairs: scalars mean constant states, except for spectral models where
    a scalar c stands for c times the first mode."""
    out = []
    for x, y in pairs:
        if isinstance(model, SpectralSpdeModel) and np.ndim(x) == 0:
            ex = np.zeros(model.n_modes)
            ey = np.zeros(model.n_modes)
            ex[0], ey[0] = x, y
            out.append((ex, ey))
        else:
            out.append((np.asarray(x, dtype=float), np.asarray(y, dtype=float)))
    return out


def _contraction(rep, s, cfg, tau, horizon_k, replicas):
    model = s.model
    c = checks.check_contraction(model, s.scheme, tau, _pairs(model, cfg.pairs), horizon_k,
                                 replicas, cfg.seed, r2_min=cfg.tol("r2_min"))
    rep.results["contraction"] = c.to_dict()
    rep.verdict("contraction", c.passed, rate=c.rate, r2=c.r2, r2_min=cfg.tol("r2_min"),
                n_used=c.n_used, notes=c.notes)
    if isinstance(model, SodeModel) and model.name == "ou" and cfg.scheme in ("bem", "em"):
        theta, _ = oracles.ou_params(model)
        ref = -math.log(oracles.recursion_factor(cfg.scheme, theta, tau)) / tau
        rel = c.rate / ref - 1.0
        rep.verdict("rate_vs_exact", abs(rel) <= cfg.tol("mixing_rel"), rate=c.rate,
                    reference=ref, relative_error=rel, limit=cfg.tol("mixing_rel"))
    elif isinstance(model, SpectralSpdeModel):
        ref = float(model.lam[0] - model.lambda_f)
        floor = cfg.tol("rate_floor") * ref
        rep.verdict("rate_vs_spectral_gap", c.rate >= floor, rate=c.rate,
                    spectral_gap=ref, floor=floor)
    return c


def run_mixing(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("mixing", cfg.to_dict())
    c = _contraction(rep, s, cfg, s.tau, cfg.horizon_k, cfg.replicas)
    rep.steps = 2 * cfg.replicas * cfg.horizon_k * len(cfg.pairs)
    rep.tables = {"header": ["t", "normalized_rms_distance"], "rows": c.table}
    return rep


# --------------------------------------------------------------------------
# order

def run_order(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("order", cfg.to_dict())
    o = _order(rep, s, cfg)
    rep.tables = {"header": ["tau", "error"], "rows": [[t, e] for t, e in zip(o.taus, o.errors)]}
    return rep


def _order(rep, s, cfg):
    window = (cfg.tol("order_min"), cfg.tol("order_max"))
    o = checks.check_strong_order(s.model, cfg.scheme, cfg.tau_grid, cfg.T, cfg.replicas,
                                  cfg.seed, cfg.reference, _x0(cfg),
                                  fine_factor=cfg.fine_factor, window=window)
    rep.results["order"] = o.to_dict()
    rep.verdict("order", o.passed, slope=o.slope, window=list(window), errors=o.errors,
                taus=o.taus)
    n = sum(cfg.replicas * round(cfg.T / t) for t in o.taus)
    rep.steps += int(n)
    return o


# --------------------------------------------------------------------------
# assumptions

def run_assumptions(cfg: ExperimentConfig, threads=None) -> Report:
    s = _Setup(cfg)
    rep = Report("assumptions", cfg.to_dict())
    wanted = cfg.checks
    if wanted is None:
        wanted = ["moment"]
        if cfg.pairs:
            wanted.append("contraction")
        if cfg.tau_grid:
            wanted.append("order")
        if isinstance(s.model, SfdeModel):
            wanted.append("hypotheses")
    horizon = cfg.horizon_k or 1000
    for name in wanted:
        if name == "moment":
            initials = cfg.initials if cfg.initials is not None else [cfg.x0 or 0.0]
            m = checks.check_moment_bound(s.model, s.scheme, s.tau, cfg.moment_q, horizon,
                                          cfg.replicas, initials, cfg.seed,
                                          tolerance=cfg.tol("moment_trend"))
            rep.results["moment"] = m.to_dict()
            rep.verdict("moment", m.passed, reason=m.reason,
                        trends=[r.get("normalized_trend") for r in m.rows],
                        failed=[r["failed"] for r in m.rows], limit=cfg.tol("moment_trend"))
            rep.steps += cfg.replicas * horizon * len(initials)
        elif name == "contraction":
            if not cfg.pairs:
                raise ValueError("experiment.pairs: required for the contraction check")
            _contraction(rep, s, cfg, s.tau, horizon, cfg.replicas)
            rep.steps += 2 * cfg.replicas * horizon * len(cfg.pairs)
        elif name == "order":
            if not cfg.tau_grid:
                raise ValueError("experiment.tau_grid: required for the order check")
            _order(rep, s, cfg)
        elif name == "hypotheses":
            if not isinstance(s.model, SfdeModel):
                raise ValueError("experiment.checks: hypotheses apply to delay models only")
            v = validate_hypotheses(s.model, cfg.samples, cfg.seed, tol=cfg.tol("hypothesis_tol"))
            rep.results["hypotheses"] = v.to_dict()
            rep.verdict("hypotheses", v.verdict, **v.to_dict())
        else:
            raise ValueError(f"experiment.checks: unknown check {name!r}")
    rep.tables = {"header": ["verdict", "passed"],
                  "rows": [[k, v["passed"]] for k, v in rep.verdicts.items()]}
    return rep


PIPELINES = {
    "lln": run_lln,
    "clt": run_clt,
    "invariant": run_invariant,
    "mixing": run_mixing,
    "order": run_order,
    "assumptions": run_assumptions,
}


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    """Run the pipeline for ``cfg.kind``; ``threads`` defaults to the config value."""
    t0 = time.perf_counter()
    rep = PIPELINES[cfg.kind](cfg, cfg.threads if threads is None else threads)
    rep.timing = {"wall_clock_s": time.perf_counter() - t0}
    return rep


def write_tables(rep: Report, path):
    tables = getattr(rep, "tables", None)
    if tables:
        write_csv(path, tables["header"], tables["rows"])
