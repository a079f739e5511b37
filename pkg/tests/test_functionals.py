import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ergolim.functionals import (FunctionalError, TestFunctional, builtin_functional,
                                 estimate_pg_norm, growth_term, holder_ratio, quasi_metric,
                                 quasi_metric_batch)

identity = TestFunctional("x", lambda x: x[:, 0], p=2, gamma=1)


@pytest.mark.trivial
def test_quasi_metric_examples():
    assert quasi_metric([1.5], [1.5], 2, 1) == 0
    assert quasi_metric(0.0, 1.0, 2, 1) == pytest.approx(1.414214, abs=1e-6)
    assert quasi_metric(0.0, 3.0, 2, 1) == pytest.approx(3.162278, abs=1e-6)


def test_pg_norm_three_point_cloud():
    cloud = np.array([0.0, 1.0, -1.0])
    assert growth_term(identity, cloud) == pytest.approx(0.5)
    assert holder_ratio(identity, np.array([0.0]), np.array([1.0]))[0] == pytest.approx(1 / math.sqrt(2))
    # enumeration: the widest pair (-1, 1) gives 2 / sqrt(3); near pairs at 0 approach 1
    est = estimate_pg_norm(identity, cloud, pairs=2000, rng_seed=0)
    assert est == pytest.approx(0.5 + 2 / math.sqrt(3), abs=1e-12)


@pytest.mark.trivial
def test_pg_norm_constant_functional():
    c = TestFunctional("c", lambda x: np.full(x.shape[0], -2.5))
    cloud = np.random.default_rng(0).normal(size=30)
    assert estimate_pg_norm(c, np.append(cloud, 0.0), pairs=500) == pytest.approx(2.5)
    assert np.all(holder_ratio(c, cloud[:10], cloud[10:20]) == 0)


@pytest.mark.trivial
def test_pg_norm_single_point():
    sq = TestFunctional("sq", lambda x: x[:, 0] ** 2)
    assert estimate_pg_norm(sq, np.array([0.0]), pairs=100) == 0.0


@pytest.mark.trivial
def test_builtin_functionals():
    assert builtin_functional("coordinate", {"i": 0})(np.array([3.0, 4.0])) == 3
    assert builtin_functional("norm_sq")(np.array([1.0, 2.0])) == 5
    seg = np.arange(6.0).reshape(3, 2)
    assert builtin_functional("segment_head")(seg) == 4.0
    assert builtin_functional("mode", {"j": 2})(np.array([1.0, 7.0])) == 7.0
    assert builtin_functional("segment_integral")(np.ones((5, 1))) == pytest.approx(1.0)
    clip = builtin_functional("clipped", {"gamma": 0.5})
    assert clip(np.array([4.0])) == 1.0 and clip(np.array([-0.25])) == -0.5
    with pytest.raises(FunctionalError, match="unknown functional"):
        builtin_functional("entropy")


def test_functional_batch_shapes():
    f = builtin_functional("norm_sq")
    assert f(np.ones((4, 3))).shape == (4,)
    assert f.batch(np.ones(3)).shape == (3,)


def test_declared_exponent_ranges():
    with pytest.raises(FunctionalError):
        TestFunctional("bad", lambda x: x[:, 0], p=0.5)
    with pytest.raises(FunctionalError):
        TestFunctional("bad", lambda x: x[:, 0], gamma=1.5)


clouds = arrays(float, st.integers(2, 32), elements=st.floats(-3, 3))


@given(c1=clouds, data=st.data())
def test_mean_difference_bounded_by_norm_times_metric(c1, data):
    c2 = data.draw(arrays(float, c1.size, elements=st.floats(-3, 3)))
    f = TestFunctional("sin", lambda x: np.sin(2 * x[:, 0]) + x[:, 0], p=2, gamma=1)
    norm = estimate_pg_norm(f, np.concatenate([c1, c2]), pairs=64)
    d = quasi_metric_batch(c1, c2, 2, 1)
    lhs = abs(f.batch(c1).mean() - f.batch(c2).mean())
    assert lhs <= norm * d.mean() + 1e-12


@given(p1=st.floats(1, 4), dp=st.floats(0, 4), seed=st.integers(0, 100))
def test_nesting_in_p(p1, dp, seed):
    p2 = p1 + dp
    g = np.random.default_rng(seed)
    f = TestFunctional("x", lambda x: x[:, 0], p=p1)
    far = g.choice([-1, 1], 40) * g.uniform(2, 4, 40)
    # denominators grow with p once every state has norm >= 1
    assert estimate_pg_norm(f, far, 300, seed, p=p2) <= estimate_pg_norm(f, far, 300, seed, p=p1) + 1e-12
    near = g.normal(size=40)
    assert estimate_pg_norm(f, near, 300, seed, p=p2) <= 2 * estimate_pg_norm(f, near, 300, seed, p=p1)


@given(n1=st.integers(1, 3000), extra=st.integers(0, 3000), seed=st.integers(0, 50))
def test_pg_norm_monotone_in_pairs(n1, extra, seed):
    cloud = np.random.default_rng(seed).normal(size=(100, 2))
    f = builtin_functional("norm_sq")
    assert estimate_pg_norm(f, cloud, n1, seed) <= estimate_pg_norm(f, cloud, n1 + extra, seed)


@given(a=arrays(float, 3, elements=st.floats(-5, 5)), b=arrays(float, 3, elements=st.floats(-5, 5)),
       p=st.floats(1, 6), gamma=st.floats(0.05, 1))
def test_quasi_metric_symmetric_nonnegative(a, b, p, gamma):
    d = quasi_metric(a, b, p, gamma)
    assert d >= 0 and d == quasi_metric(b, a, p, gamma)
    assert quasi_metric(a, a, p, gamma) == 0
