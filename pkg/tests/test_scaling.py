import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbid.errors import InvalidConfig, NonPositiveTheta, OutOfRange
from vbid.scaling import (
    ScalingConfig,
    FeatureStats,
    sigmoid_scale,
    sigmoid_unscale,
    theta_from_spreads,
    zscore_fit_apply,
)

thetas = st.floats(0.5, 100.0)


def test_midpoint():
    assert sigmoid_scale(0.0, 20.0) == 0.5
    assert sigmoid_unscale(0.5, 10.0) == 0.0


def test_closed_form_value():
    # 1 / (1 + e^-1)
    assert sigmoid_scale(20.0, 20.0) == pytest.approx(0.7310585786300049, rel=1e-15)


@pytest.mark.parametrize("x", [-500.0, -1.0, 0.0, 1.0, 500.0])
def test_round_trip_examples(x):
    back = sigmoid_unscale(sigmoid_scale(x, 40.0), 40.0)
    assert abs(back - x) < 1e-9 * max(1.0, abs(x))


@pytest.mark.parametrize("y", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_unscale_out_of_range(y):
    with pytest.raises(OutOfRange):
        sigmoid_unscale(y, 20.0)


@pytest.mark.parametrize("theta", [0.0, -1.0])
def test_theta_must_be_positive(theta):
    with pytest.raises(NonPositiveTheta):
        sigmoid_scale(1.0, theta)
    with pytest.raises(NonPositiveTheta):
        sigmoid_unscale(0.3, theta)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), thetas)
def test_monotone(x1, x2, theta):
    if x1 < x2 and sigmoid_scale(x2, theta) < 1.0 and sigmoid_scale(x1, theta) > 0.0:
        assert sigmoid_scale(x1, theta) <= sigmoid_scale(x2, theta)
    y = sigmoid_scale(x1, theta)
    assert 0.0 <= y <= 1.0


def test_strictly_increasing_on_grid():
    x = np.linspace(-300, 300, 10001)
    assert np.all(np.diff(sigmoid_scale(x, 20.0)) > 0)


@given(st.floats(-1e3, 1e3), thetas)
def test_scale_equivariance(x, theta):
    assert sigmoid_scale(x, theta) == pytest.approx(sigmoid_scale(x / theta, 1.0), rel=1e-15, abs=1e-300)


@given(st.floats(-11.0, 11.0), st.floats(10.0, 40.0))
def test_round_trip_absolute(z, theta):
    x = z * theta
    assert abs(sigmoid_unscale(sigmoid_scale(x, theta), theta) - x) < 1e-9


@given(st.floats(-18.0, 18.0), thetas)
def test_round_trip_relative(z, theta):
    x = z * theta
    assert abs(sigmoid_unscale(sigmoid_scale(x, theta), theta) - x) < 1e-9 * max(1.0, abs(x))


@given(st.floats(1e-6, 1 - 1e-6), thetas)
def test_scale_of_unscale(y, theta):
    assert sigmoid_scale(sigmoid_unscale(y, theta), theta) == pytest.approx(y, rel=1e-12)


def test_zscore_hand_values():
    stats, out = zscore_fit_apply(np.array([[1.0], [2.0], [3.0]]), ["load"])
    # population std of [1, 2, 3] is sqrt(2/3)
    np.testing.assert_allclose(out[:, 0], np.array([-1.0, 0.0, 1.0]) / math.sqrt(2.0 / 3.0), rtol=1e-15)
    assert stats.mean[0] == 2.0


def test_zscore_constant_and_passthrough():
    vals = np.array([[5.0, 1.0, 0.0], [5.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
    stats, out = zscore_fit_apply(vals, ["flat", "hour_00", "node_a"])
    assert stats.zero_variance == ("flat",)
    np.testing.assert_array_equal(out[:, 0], 0.0)
    np.testing.assert_array_equal(out[:, 1:], vals[:, 1:])


@given(st.integers(2, 200), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_zscore_moments(n, k, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(rng.uniform(-100, 100, k), rng.uniform(0.1, 50, k), (n, k))
    stats, out = zscore_fit_apply(vals, [f"f{i}" for i in range(k)])
    ok = np.array([f"f{i}" not in stats.zero_variance for i in range(k)])
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(out.var(axis=0)[ok] - 1.0) < 1e-6)
    np.testing.assert_array_equal(stats.transform(vals), out)


def test_stats_round_trip():
    stats, _ = zscore_fit_apply(np.arange(12.0).reshape(4, 3), ["a", "b", "hour_1"])
    back = FeatureStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(back.transform(np.ones((2, 3))), stats.transform(np.ones((2, 3))))


def test_theta_rule():
    rng = np.random.default_rng(0)
    s = np.stack([rng.normal(0, 1, 1000), rng.normal(0, 25, 1000), rng.normal(0, 400, 1000)])
    th = theta_from_spreads(s)
    assert th[0] == 10.0 and th[2] == 40.0
    assert th[1] == pytest.approx(s[1].std())


def test_scaling_config_invariants():
    ScalingConfig({"a": 20.0}, 1000.0)
    with pytest.raises(InvalidConfig):
        ScalingConfig({"a": 20.0}, 15.0)
    with pytest.raises(NonPositiveTheta):
        ScalingConfig({"a": 0.0}, 15.0)
