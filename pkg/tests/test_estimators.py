import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import lfilter

from ergolim import oracles
from ergolim.estimators import (CltParams, EstimatorError, autocovariances, check_condition,
                                clt_params, clt_statistic, clt_statistics, default_lag,
                                lln_rate_fit, lln_rate_from_means, running_means, time_average,
                                variance_batch_means, variance_plugin)
from ergolim.functionals import builtin_functional
from ergolim.models import AssumptionMeta, builtin_model
from ergolim.schemes import run

series = arrays(float, st.integers(2, 200), elements=st.floats(-1e3, 1e3))


@pytest.fixture(scope="module")
def ou_path():
    m = builtin_model("ou")
    return run(m, "bem", 0.01, 10**6 - 1, 0.0, seed=42, observe=lambda x: x[:, 0]).values[0]


@pytest.mark.trivial
def test_clt_params_examples():
    assert clt_params(0.01, 0.25).k == 1000
    # lambda = 0.5 needs alpha2 gamma > 0.5
    assert clt_params(0.04, 0.5, alpha=(0.0, 1.0)).k == 625
    p = clt_params(0.04, 0.2, alpha=(1.0, 0.5))
    assert p.h == pytest.approx(0.2) and p.n_modes == 5


def test_clt_params_range_gate():
    with pytest.raises(EstimatorError, match="lambda out of open interval"):
        clt_params(0.01, 0.5)
    with pytest.raises(EstimatorError):
        clt_params(1.5, 0.1)


@pytest.mark.trivial
def test_condition_examples():
    meta = AssumptionMeta(q_tilde=1, r_tilde=1, kappa=0, beta=0)
    res = check_condition(2, 1, 0.25, meta, q=100, r=100)
    assert res.required_q_and_r == 25 and res.passed
    assert res.required_q_lln == 6
    assert not check_condition(2, 1, 0.25, meta, q=24, r=100).clt_passed
    assert not check_condition(2, 1, 0.25, meta, q=5, r=100).lln_passed
    gate = check_condition(2, 1, 0.5, meta, q=100, r=100)
    assert not gate.passed and gate.reason == "lambda out of open interval"


@given(p=st.floats(1, 6), gamma=st.floats(0.1, 1), lam=st.floats(0.01, 0.49),
       q=st.floats(1, 200), dq=st.floats(0, 200), qt=st.floats(1, 3), kappa=st.floats(0, 2))
def test_condition_monotone_in_moments(p, gamma, lam, q, dq, qt, kappa):
    meta = AssumptionMeta(q_tilde=qt, r_tilde=qt, kappa=kappa)
    low = check_condition(p, gamma, lam, meta, q=q, r=q)
    high = check_condition(p, gamma, lam, meta, q=q + dq, r=q + dq)
    assert not (low.passed and not high.passed)
    assert not (low.clt_passed and not high.clt_passed)


@pytest.mark.trivial
def test_time_average_examples():
    assert time_average([1, 1, 1], 3) == 1
    assert time_average([0, 2], 2) == 1
    with pytest.raises(EstimatorError):
        time_average([1.0], 2)


@given(x=series, a=st.floats(-100, 100), b=st.floats(-100, 100))
def test_time_average_affine(x, a, b):
    lhs = time_average(a + b * x)
    rhs = a + b * time_average(x)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-7 * (1 + abs(b) * np.abs(x).max()))


@pytest.mark.trivial
def test_clt_statistic_examples():
    p = clt_params(0.01, 0.25)
    assert clt_statistic(np.full(1000, 0.3), p, 0.3) == 0
    one = CltParams(tau=1.0, lam=0.25, k=1)
    assert clt_statistic([2.5], one, 0.5) == 2


@given(k=st.integers(1, 500), tau=st.floats(1e-4, 1), c=st.floats(-10, 10))
def test_clt_statistic_of_centered_constant_is_zero(k, tau, c):
    p = CltParams(tau=tau, lam=0.1, k=k)
    assert clt_statistic(np.full(k, c), p, c) == 0.0


def test_ou_clt_statistic_variance():
    m = builtin_model("ou")
    p = clt_params(0.01, 0.25)
    vals = run(m, "bem", 0.01, p.k - 1, 0.0, seed=42, replicas=1000, observe=lambda x: x[:, 0]).values
    s = clt_statistics(vals, p, 0.0)
    assert s.shape == (1000,)
    assert abs(np.var(s, ddof=1) - 1) <= 0.15


def test_ou_clt_statistic_variance_finite_k_oracle():
    # from x = 0 the exact variance at k = 1000 is below the limit 1
    m = builtin_model("ou")
    p = clt_params(0.01, 0.25)
    exact = oracles.clt_statistic_variance("bem", 1.0, 1.0, 0.01, p.k)
    vals = run(m, "bem", 0.01, p.k - 1, 0.0, seed=5, replicas=4000, observe=lambda x: x[:, 0]).values
    v = np.var(clt_statistics(vals, p, 0.0), ddof=1)
    assert abs(v - exact) <= 4 * exact * math.sqrt(2 / 3999)


@pytest.mark.trivial
def test_plugin_iid_and_constant():
    z = np.random.default_rng(0).normal(size=100_000)
    est = variance_plugin(z, 0.01, 50)
    assert est.value == pytest.approx(0.01 * z.var(), rel=0.1)
    assert variance_plugin(np.full(500, 2.0), 0.01, 10).value == 0


@given(x=series, tau=st.floats(1e-4, 1))
def test_plugin_lag_zero_is_tau_c0(x, tau):
    c0 = autocovariances(x, 0)[0]
    assert variance_plugin(x, tau, 0).value == tau * c0


def test_plugin_negative_sum_is_clamped():
    alt = np.tile([1.0, -1.0], 50)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = variance_plugin(alt, 1.0, 1)
    assert est.clamped and est.value == 0 and est.raw < 0
    assert any("clamped" in str(w.message) for w in caught)


def test_autocovariances_match_direct_sum():
    x = np.random.default_rng(1).normal(size=300)
    dx = x - x.mean()
    direct = [np.dot(dx[: 300 - j], dx[j:]) / 300 for j in range(6)]
    assert np.allclose(autocovariances(x, 5), direct, atol=1e-13)


def test_ou_plugin(ou_path):
    plug = variance_plugin(ou_path, 0.01, 2000)
    assert abs(plug.value - 1) <= 0.05
    assert not plug.tail_flag
    assert default_lag(ou_path, 0.01) == pytest.approx(1000, rel=0.05)


def test_ou_batch_means_agrees_with_plugin(ou_path):
    plug = variance_plugin(ou_path, 0.01, 2000).value
    bm = variance_batch_means(ou_path, 0.01, 10_000).value
    assert abs(bm - plug) <= 0.05 + 0.1


@pytest.mark.xfail(strict=True, reason="100 batches give a standard error of 0.14, above the 0.1 band; "
                                       "this path lands at 1.116")
def test_ou_batch_means_band(ou_path):
    assert abs(variance_batch_means(ou_path, 0.01, 10_000).value - 1) <= 0.1


def test_ou_estimator_spread_across_paths():
    m = builtin_model("ou")
    paths = run(m, "bem", 0.01, 10**6 - 1, 0.0, seed=1000, replicas=30, observe=lambda x: x[:, 0]).values
    bm = np.array([variance_batch_means(r, 0.01, 10_000).value for r in paths])
    pl = np.array([variance_plugin(r, 0.01, 2000).value for r in paths])
    # truncated sums: sd ~ sqrt(2 (2L + 1) / n); batch means: sd ~ sqrt(2 / (nb - 1))
    assert abs(pl.mean() - 1) <= 4 * math.sqrt(2 * 4001 / 1e6) / math.sqrt(30)
    assert abs(bm.mean() - 1) <= 4 * math.sqrt(2 / 99) / math.sqrt(30)
    assert 0.5 <= pl.std(ddof=1) / math.sqrt(2 * 4001 / 1e6) <= 1.5
    assert 0.5 <= bm.std(ddof=1) / math.sqrt(2 / 99) <= 1.5


def test_plugin_tail_flag_when_lag_short(ou_path):
    assert variance_plugin(ou_path[:100_000], 0.01, 20).tail_flag


@pytest.mark.trivial
def test_batch_means_examples():
    assert variance_batch_means(np.full(100, 3.0), 0.1, 10).value == 0
    z = np.random.default_rng(2).normal(size=20_000)
    assert variance_batch_means(z, 1.0, 1).value == pytest.approx(np.var(z, ddof=1))
    assert variance_batch_means(z, 1.0, 1).value == pytest.approx(1, abs=0.05)
    with pytest.raises(EstimatorError):
        variance_batch_means(z[:3], 1.0, 2)


@settings(max_examples=8, derandomize=True)
@given(phi=st.floats(0.0, 0.9), seed=st.integers(0, 2**32 - 1))
def test_ar1_estimators_match_long_run_variance(phi, seed):
    n = 10**6
    e = np.random.default_rng(seed).normal(size=n)
    x = lfilter([1.0], [1.0, -phi], e)
    truth = 1.0 / (1.0 - phi) ** 2
    lag = max(10, math.ceil(10 / max(-math.log(phi), 1e-3))) if phi > 0 else 10
    batch = math.ceil(50 / (1 - phi))
    assert abs(variance_plugin(x, 1.0, lag).value / truth - 1) <= 0.10
    assert abs(variance_batch_means(x, 1.0, batch).value / truth - 1) <= 0.10


def test_running_means():
    v = np.array([[1.0, 3.0, 5.0, 7.0]])
    assert np.allclose(running_means(v, [1, 2, 4]), [[1.0, 2.0, 4.0]])


@pytest.mark.trivial
def test_lln_rate_iid_surrogate():
    ks = [100, 1000, 10_000]
    z = np.random.default_rng(3).normal(size=(400, 10_000))
    fit = lln_rate_from_means(running_means(z, ks), ks, 1.0, 0.0)
    assert fit.slope == pytest.approx(-1, abs=0.15)


@pytest.mark.trivial
def test_lln_rate_constant_series_negative_control():
    ks = [10, 100, 1000]
    means = running_means(np.full((5, 1000), 2.0), ks)
    fit = lln_rate_from_means(means, ks, 0.01, 1.9)
    assert fit.slope == pytest.approx(0, abs=1e-9)


def test_lln_rate_ou_coordinate():
    f = builtin_functional("coordinate", {"mu": 0.0})
    fit = lln_rate_fit(builtin_model("ou"), "bem", f, 0.01, [1000, 10_000, 100_000], 200, seed=7)
    assert -1.15 <= fit.slope <= -0.85


def test_degenerate_grid_rejected():
    with pytest.raises(EstimatorError, match="degenerate grid"):
        lln_rate_from_means(np.zeros((2, 2)), [100, 200], 0.01, 0.0)
