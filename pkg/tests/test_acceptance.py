"""End-to-end acceptance criteria 1-10.

Each criterion is split into its parts.  Every part records its numbers in the
shared log before asserting, and the terminal summary prints one PASS/FAIL line
per criterion.  Parts that fail for reasons analysed in the decision ledger are
strict xfails: they still run in full, and an unexpected pass turns the suite red.
"""
import functools
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ergolim import oracles, rng
from ergolim.estimators import default_lag, variance_batch_means, variance_plugin
from ergolim.harness import load_config, run_experiment
from ergolim.harness.config import build_model
from ergolim.models import builtin_model
from ergolim.schemes import run
from ergolim.stats import ks_test

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
META_SEEDS = range(1, 21)

C1 = "C1 ou_clt_flagship"
C2 = "C2 variance_estimators"
C3 = "C3 strong_lln"
C4 = "C4 invariant_order"
C5 = "C5 mixing"
C6 = "C6 strong_order"
C7 = "C7 superlinear_robustness"
C8 = "C8 spde_pipeline"
C9 = "C9 sfde_pipeline"
C10 = "C10 infrastructure"


def record(log, crit, part, ok, detail):
    log.setdefault(crit, []).append((part, bool(ok), detail))
    print(f"{crit} / {part}: {'pass' if ok else 'FAIL'} ({detail})")
    assert ok, f"{crit} / {part}: {detail}"


@functools.lru_cache(maxsize=None)
def report(name, seed=None, threads=0):
    return run_experiment(load_config(CONFIGS / f"{name}.toml", {"seed": seed}), threads)


def evidence(rep, verdict):
    return rep.verdicts[verdict]["evidence"]


# --------------------------------------------------------------------- C1
def test_c1_variance(acceptance_log):
    e = evidence(report("ou_clt"), "variance")
    v = e["sample_variance"]
    record(acceptance_log, C1, "variance", 0.85 <= v <= 1.15, f"sample variance {v:.4f}")


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="finite-k statistic from x0=0 has exact variance 0.849, not 1; see ledger")
def test_c1_ks(acceptance_log):
    e = evidence(report("ou_clt"), "ks")
    assert e["v2"] == 1.0 and e["n"] == 1000
    record(acceptance_log, C1, "ks", e["p_value"] > 0.01, f"p={e['p_value']:.4g}")


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="at true variance 0.849 KS rejects at 5% with probability 0.25; "
                          "expected 5 of 20, see ledger")
def test_c1_meta_stability(acceptance_log):
    ps = [evidence(report("ou_clt", seed, threads=0), "ks")["p_value"] for seed in META_SEEDS]
    n_rej = sum(p < 0.05 for p in ps)
    record(acceptance_log, C1, "meta", n_rej <= 4, f"{n_rej}/20 seeds reject at 5%")


# --------------------------------------------------------------------- C2
@pytest.fixture(scope="module")
def ou_long_path():
    m = builtin_model("ou")
    return run(m, "bem", 0.01, 10**6 - 1, 0.0, seed=42, observe=lambda x: x[:, 0]).values[0]


def _estimates(series):
    tau = 0.01
    plug = variance_plugin(series, tau, default_lag(series, tau)).value
    bm = variance_batch_means(series, tau, series.size // 100).value
    return plug, bm


def test_c2_plugin_x(acceptance_log, ou_long_path):
    v2 = oracles.long_run_variance("bem", 1.0, 1.0, 0.01)
    plug, _ = _estimates(ou_long_path)
    record(acceptance_log, C2, "plugin x", abs(plug - v2) <= 0.05, f"{plug:.4f} vs {v2:.4f}")


def test_c2_batch_vs_plugin_x(acceptance_log, ou_long_path):
    plug, bm = _estimates(ou_long_path)
    record(acceptance_log, C2, "batch~plugin x", abs(bm - plug) <= 0.10, f"{bm:.4f} vs {plug:.4f}")


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="100-batch estimator has standard error 0.14 > 0.10; see ledger")
def test_c2_batch_vs_oracle_x(acceptance_log, ou_long_path):
    _, bm = _estimates(ou_long_path)
    record(acceptance_log, C2, "batch~oracle x", abs(bm - 1.0) <= 0.10, f"{bm:.4f} vs 1")


def test_c2_x_squared(acceptance_log, ou_long_path):
    v2 = oracles.long_run_variance("exact", 1.0, 1.0, functional="x2")
    plug, bm = _estimates(ou_long_path ** 2)
    ok = abs(plug - v2) <= 0.05 and abs(bm - v2) <= 0.05
    record(acceptance_log, C2, "x^2", ok, f"plugin {plug:.4f}, batch {bm:.4f} vs {v2}")


# --------------------------------------------------------------------- C3
def test_c3_limit(acceptance_log):
    rep = report("ou_lln")
    e = evidence(rep, "limit")
    assert e["mu"] == pytest.approx(1 / 2.01) and rep.results["k"][-1] == 10**6
    record(acceptance_log, C3, "limit", e["error"] <= 0.01, f"|S_k/k - 1/2.01| = {e['error']:.2e}")


def test_c3_rate(acceptance_log):
    e = evidence(report("ou_lln"), "rate")
    record(acceptance_log, C3, "mse slope", -1.15 <= e["slope"] <= -0.85, f"slope {e['slope']:.3f}")


# --------------------------------------------------------------------- C4
def test_c4_w2_monotone(acceptance_log):
    rep = report("ou_invariant")
    e = evidence(rep, "w2_monotone")
    w2 = e["w2"]
    assert e["taus"] == [0.02, 0.01, 0.005, 0.0025] and rep.results["n"] == 10**5
    ok = all(a > b for a, b in zip(w2, w2[1:]))
    record(acceptance_log, C4, "w2 decreasing", ok, ", ".join(f"{w:.2e}" for w in w2))


def test_c4_gap_slope(acceptance_log):
    taus = np.array([0.02, 0.01, 0.005, 0.0025])
    gap = np.abs(1 / (2 + taus) - 0.5)
    direct = np.polyfit(np.log(taus), np.log(gap), 1)[0]
    s = evidence(report("ou_invariant"), "analytic_gap_slope")["slope"]
    assert s == pytest.approx(direct, abs=1e-12)
    record(acceptance_log, C4, "gap slope", abs(s - 1) <= 0.1, f"slope {s:.4f}")


# --------------------------------------------------------------------- C5
def test_c5_ou(acceptance_log):
    e = evidence(report("ou_mixing"), "contraction")
    ref = np.log(1.01) / 0.01
    ok = abs(e["rate"] / ref - 1) <= 0.02 and e["r2"] >= 0.999
    record(acceptance_log, C5, "ou", ok, f"c={e['rate']:.4f} vs {ref:.4f}, R2={e['r2']:.6f}")


def test_c5_allen_cahn(acceptance_log):
    rep = report("allen_cahn_mixing")
    m = build_model(rep.config["model"])
    assert m.n_modes == 8 and rep.config["tau"] == 0.01
    gap = m.lam[0] - m.lambda_f
    c = evidence(rep, "contraction")["rate"]
    record(acceptance_log, C5, "allen_cahn", c >= 0.8 * gap, f"c={c:.3f} vs 0.8*{gap:.3f}")


# --------------------------------------------------------------------- C6
def test_c6_ou(acceptance_log):
    rep = report("ou_order")
    e = evidence(rep, "order")
    assert e["taus"] == [2.0 ** -j for j in range(4, 10)]
    record(acceptance_log, C6, "ou", e["slope"] >= 0.9, f"slope {e['slope']:.3f}")


def test_c6_double_well(acceptance_log):
    rep = report("double_well_order")
    e = evidence(rep, "order")
    assert rep.config["reference"] == "fine" and rep.config["fine_factor"] == 64
    assert rep.config["model"].get("multiplicative")
    record(acceptance_log, C6, "double_well", 0.45 <= e["slope"] <= 0.75, f"slope {e['slope']:.3f}")


# --------------------------------------------------------------------- C7
def test_c7_em_overflows(acceptance_log):
    rep = report("double_well_em_moment")
    e = evidence(rep, "moment")
    ok = not rep.verdicts["moment"]["passed"] and e["reason"] == "overflow"
    record(acceptance_log, C7, "em overflow detected", ok, f"reason {e['reason']!r}")


def test_c7_bem_passes(acceptance_log):
    rep = report("double_well_bem_moment")
    assert rep.config["tau"] == 0.5 and rep.config["initials"] == [3.0]
    record(acceptance_log, C7, "bem passes", rep.verdicts["moment"]["passed"],
           f"trend {evidence(rep, 'moment')['trends'][0]:.4f}")


# --------------------------------------------------------------------- C8
def test_c8_moment(acceptance_log):
    rep = report("allen_cahn_moment")
    assert rep.config["model"]["N"] == 16
    record(acceptance_log, C8, "moment", rep.verdicts["moment"]["passed"],
           f"trend {evidence(rep, 'moment')['trends'][0]:.4f}")


def test_c8_lln(acceptance_log):
    e = evidence(report("allen_cahn_lln"), "stabilizes")
    record(acceptance_log, C8, "lln drift", e["drift"] < 0.02, f"drift {e['drift']:.4f}")


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="k=1000 statistic is skewed and offset by the long-run centering error; see ledger")
def test_c8_clt(acceptance_log):
    rep = report("allen_cahn_clt")
    assert rep.results["long_run_steps"] == 100 * rep.results["params"]["k"]
    e = evidence(rep, "ks")
    record(acceptance_log, C8, "ks", e["p_value"] > 0.01, f"p={e['p_value']:.3g}")


# --------------------------------------------------------------------- C9
def test_c9_hypotheses(acceptance_log):
    rep = report("linear_delay_hypotheses")
    record(acceptance_log, C9, "hypotheses", rep.verdicts["hypotheses"]["passed"],
           str(evidence(rep, "hypotheses")["passed"]))


def test_c9_mixing(acceptance_log):
    e = evidence(report("linear_delay_mixing"), "contraction")
    ok = e["rate"] > 0 and e["r2"] >= 0.95
    record(acceptance_log, C9, "mixing", ok, f"c={e['rate']:.3f}, R2={e['r2']:.4f}")


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="k=67 steps cover t=3.35, far from the CLT regime; see ledger")
def test_c9_ks(acceptance_log):
    rep = report("linear_delay_clt")
    assert rep.results["v2_source"] == "independent"
    e = evidence(rep, "ks")
    record(acceptance_log, C9, "ks", e["p_value"] > 0.01, f"p={e['p_value']:.3g}")


def test_c9_plugin_vs_oracle(acceptance_log):
    e = evidence(report("linear_delay_clt"), "plugin_vs_oracle")
    record(acceptance_log, C9, "plugin~oracle", abs(e["relative_error"]) <= 0.15,
           f"{e['plugin']:.4f} vs {e['v2']:.4f}")


# --------------------------------------------------------------------- C10
@pytest.mark.parametrize("name", ["ou_clt", "linear_delay_clt", "allen_cahn_mixing"])
def test_c10_determinism(acceptance_log, name):
    cfg = load_config(CONFIGS / f"{name}.toml")
    a = run_experiment(cfg, threads=1).to_json(timing=False)
    b = run_experiment(cfg, threads=8).to_json(timing=False)
    record(acceptance_log, C10, f"identical {name}", a == b, "threads 1 vs 8")


def test_c10_ks_meta_band(acceptance_log):
    z = rng.normal_block(42, np.arange(200), 1, 0, 500)[:, :, 0]
    n_rej = sum(ks_test(row, 1.0).p_value < 0.05 for row in z)
    record(acceptance_log, C10, "ks false positives", 2 <= n_rej <= 20, f"{n_rej}/200 at 5%")


def test_c10_trivial_examples(acceptance_log):
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"))
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "trivial", "-p", "no:cacheprovider",
                           str(ROOT / "tests")], capture_output=True, text=True, cwd=ROOT, env=env)
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    record(acceptance_log, C10, "worked examples", proc.returncode == 0, last)
