import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbessel.bessel import (ScaleFault, TruncatedSdeConfig, bessel_direct, bridged_hit,
                            drift_integrability, euler_truncated, extract_beta, first_hit,
                            first_hit_index, ito_decomposition, nonattainability_trend,
                            scale_function_check, scaling_check, sde_residual, smooth_sqrt)
from gbessel.core import ConstantControl, PiecewiseControl, TimeGrid, VolatilityBand, simulate_paths
from gbessel.montecarlo import ControlFamily

WIDE = VolatilityBand(1.0, 2.0)


def test_radial_process_is_the_norm():
    path = simulate_paths(TimeGrid(1.0, 50), WIDE, 3, [1.0, 2.0, 2.0], ConstantControl(2.0), 0, 4)
    bp = bessel_direct(path)
    assert bp.r0 == 3.0
    np.testing.assert_allclose(bp.R, np.linalg.norm(path.values, axis=-1))


def test_frozen_path_at_origin_has_zero_driver():
    grid = TimeGrid(1.0, 10)
    path = simulate_paths(grid, WIDE, 3, None, ConstantControl(1.0), normals=np.zeros((2, 10, 3)))
    bp = extract_beta(path)
    assert np.all(bp.beta == 0.0)
    with pytest.raises(ValueError):
        sde_residual(bp)


def test_driver_quadratic_variation_matches_nu():
    path = simulate_paths(TimeGrid(1.0, 2000), WIDE, 5, [1, 0, 0, 0, 0], ConstantControl(4.0), 1, 40)
    beta = extract_beta(path).beta
    qv = np.sum(np.diff(beta, axis=-1) ** 2, axis=-1)
    assert abs(qv.mean() - 4.0) < 0.1


def test_truncated_config_validation_and_bounds():
    grid = TimeGrid(1.0, 10)
    for bad in [dict(m=0.5), dict(r=0.0), dict(n=0), dict(n=2.5)]:
        kw = dict(r=1.0, m=1.0, n=10, band=WIDE, grid=grid) | bad
        with pytest.raises(ValueError):
            TruncatedSdeConfig(**kw)
    cfg = TruncatedSdeConfig(1.0, 1.0, 10, WIDE, grid)
    assert cfg.second_moment_bound() == 13.0
    assert cfg.fourth_moment_bound() == 521.0
    assert cfg.level == 0.1
    np.testing.assert_array_equal(cfg.f_n(np.array([0.0, 0.05, 0.5, -2.0])), [10, 10, 2, 0.5])


def test_hit_helpers():
    X = np.array([[1.0, 0.5, 0.05, 0.2], [1.0, 0.9, 0.8, 0.7]])
    np.testing.assert_array_equal(first_hit_index(X, 0.1), [2, -1])
    grid = TimeGrid(3.0, 3)
    assert first_hit(X[0], 0.1, grid) == 2.0
    assert first_hit(X[1], 0.1, grid) is None


def test_bridge_detects_crossings_between_grid_points():
    X = np.array([[1.0, 0.15, 1.0], [1.0, 0.05, 1.0]])
    nu = np.ones((2, 2))
    hit, value = bridged_hit(X, nu, 0.01, 0.1, np.zeros((2, 2)))
    assert hit.all()
    np.testing.assert_array_equal(value, [0.1, 0.1])
    miss, value = bridged_hit(X[:1], nu[:1], 0.01, 0.1, np.ones((1, 2)))
    assert not miss.any() and value[0] == 1.0


def test_grid_only_detection_can_fault():
    cfg = TruncatedSdeConfig(1.0, 1.0, 10, VolatilityBand(1, 1), TimeGrid(5.0, 200))
    fam = ControlFamily((ConstantControl(1.0),), cfg.band)
    with pytest.raises(ScaleFault):
        scale_function_check(cfg, fam, 2000, seed=1, bridge=False)


def test_euler_batches_are_consistent():
    cfg = TruncatedSdeConfig(1.0, 1.0, 10, WIDE, TimeGrid(1.0, 50))
    pol = PiecewiseControl((0.5,), (4.0, 1.0))
    whole = euler_truncated(cfg, pol, seed=2, n_paths=5)
    part = euler_truncated(cfg, pol, seed=2, n_paths=2, first_path=3)
    np.testing.assert_array_equal(whole.X[3:], part.X)


@settings(max_examples=50)
@given(st.integers(1, 30))
def test_smooth_sqrt_is_c2_at_the_seam(k):
    eps = 2.0**-k / 3.0
    below = np.nextafter(eps, 0.0)
    for order in range(3):
        hi = smooth_sqrt(eps, eps, order)
        assert abs(smooth_sqrt(eps, below, order) - hi) <= 1e-12 * abs(hi)
    assert smooth_sqrt(eps, 0.0) == pytest.approx(0.375 * math.sqrt(eps))
    with pytest.raises(ValueError):
        smooth_sqrt(eps, 1.0, order=3)


def test_smooth_sqrt_matches_sqrt_above_seam():
    y = np.linspace(0.25, 4.0, 20)
    np.testing.assert_array_equal(smooth_sqrt(0.25, y), np.sqrt(y))


def test_ito_pieces_vanish_where_they_should():
    grid = TimeGrid(1.0, 400)
    far = simulate_paths(grid, WIDE, 3, [5.0, 0, 0], ConstantControl(1.0), 3, 10)
    rep = ito_decomposition(far, 8)
    assert np.all(rep.K == 0.0)
    assert rep.I.shape == (10, 3)
    assert np.all(rep.identity_residual < 0.2)


def test_nonattainability_and_drift_bounds():
    fam = ControlFamily((ConstantControl(1.0), ConstantControl(4.0)), WIDE)
    x = np.array([1.0, 0, 0, 0, 0])
    grid = TimeGrid(1.0, 400)
    rows = nonattainability_trend(x, [2, 4], fam, grid, 400, seed=4)
    assert all(r["pass"] for r in rows)
    assert rows[1]["estimate"] <= rows[0]["estimate"]
    drift = drift_integrability(x, [1, 2, 3], fam, grid, 400, alpha=0.6, seed=5)
    assert all(r["pass"] for r in drift)


def test_brownian_scaling():
    checks = scaling_check(WIDE, 3, 1.0, 2.0, PiecewiseControl((0.5,), (4.0, 1.0)), 1.0, 200, 3000, 6)
    assert all(c["pass"] for c in checks)
    with pytest.raises(TypeError):
        from gbessel.core import FeedbackControl
        scaling_check(WIDE, 3, 1.0, 2.0, FeedbackControl(lambda t, x: x[:, 0], WIDE), 1.0, 10, 10)
