import math
from fractions import Fraction

import numpy as np
import pytest

from oodcal.errors import DataValidationError
from oodcal.grood_core import (
    ClassGaussian,
    GroodModel,
    OODGaussian,
    OODPriorConfig,
    ScorePoint,
    build_ood_model,
    calibrate,
    calibrated_score,
    decide,
    default_epsilon_grid,
    fit_class_gaussians,
    fit_grood,
    fit_score_gaussian,
    log_likelihood_ratio,
    nearest_rank,
    own_class_points,
    predict_class,
    score_point,
    score_points,
)
from oodcal.linear_probe import LinearProbeModel, LPTrainConfig
from oodcal.nearest_mean import NearestMeanModel

from oracles import nearest_rank_quantile


def _lp(weights, bias):
    weights = np.asarray(weights, dtype=np.float64)
    return LinearProbeModel(weights=weights, bias=np.asarray(bias, dtype=np.float64),
                            class_count=weights.shape[0], dim=weights.shape[1],
                            train_config=LPTrainConfig())


def _nm(means):
    means = np.asarray(means, dtype=np.float64)
    return NearestMeanModel(means=means, class_count=means.shape[0],
                            dim=means.shape[1])


def _point_model(gaussians, ood, strategies=()):
    """Model wrapper for point-level tests; LP/NM heads are inert."""
    k = len(gaussians)
    return GroodModel(
        class_gaussians=tuple(gaussians),
        ood=ood,
        strategies=tuple(strategies),
        lp_model=_lp(np.zeros((k, 2)), np.zeros(k)),
        nm_model=_nm(np.zeros((k, 2))),
    )


def _isotropic(k=2, sigma_ood=10.0):
    gaussians = [ClassGaussian(mean=np.zeros(2), cov=np.eye(2), class_index=c)
                 for c in range(k)]
    return gaussians, OODGaussian(sigma_lp=sigma_ood, sigma_nm=sigma_ood)


# -- score points ---------------------------------------------------------------

def test_score_point_composition():
    lp = _lp(np.eye(2), np.zeros(2))
    nm = _nm([[5.0, 0.0], [5.0, -4.0]])
    x = np.array([5.0, 0.0])
    p0 = score_point(lp, nm, x, 0)
    assert (p0.lp, p0.nm) == (5.0, 1.0)
    p1 = score_point(lp, nm, x, 1)
    assert p1.lp == 0.0
    assert p1.nm == pytest.approx(1.0 / 5.0)


def test_score_point_class_out_of_range():
    lp = _lp(np.eye(2), np.zeros(2))
    nm = _nm([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DataValidationError, match="out of range"):
        score_point(lp, nm, np.zeros(2), 2)


def test_score_points_shape_and_mismatch():
    lp = _lp(np.eye(2), np.zeros(2))
    nm = _nm([[0.0, 0.0], [1.0, 1.0]])
    pts = score_points(lp, nm, np.zeros((7, 2)))
    assert pts.shape == (7, 2, 2)
    with pytest.raises(DataValidationError, match="disagree"):
        score_points(lp, _nm([[0.0, 0.0, 0.0]]), np.zeros((1, 2)))


# -- gaussian fitting -----------------------------------------------------------

def test_fit_score_gaussian_closed_form():
    points = np.array([[1.0, 1.0], [1.0, 3.0], [3.0, 1.0], [3.0, 3.0]])
    g = fit_score_gaussian(points, 0)
    assert np.allclose(g.mean, [2.0, 2.0])
    assert np.allclose(g.cov, np.eye(2))
    assert not g.degenerate


def test_fit_score_gaussian_identical_points_regularized():
    g = fit_score_gaussian(np.array([[2.0, 5.0], [2.0, 5.0]]), 3)
    assert g.degenerate
    assert np.allclose(g.cov, 1e-9 * np.eye(2))
    assert np.allclose(g.mean, [2.0, 5.0])


def test_fit_score_gaussian_single_sample_rejected():
    with pytest.raises(DataValidationError, match="need >= 2"):
        fit_score_gaussian(np.array([[1.0, 1.0]]), 0)


def test_fit_class_gaussians_through_models(small_pipeline):
    gaussians = fit_class_gaussians(small_pipeline["lp"], small_pipeline["nm"],
                                    small_pipeline["train"])
    assert len(gaussians) == 3
    pts = score_points(small_pipeline["lp"], small_pipeline["nm"],
                       small_pipeline["train"].vectors)
    for c, g in enumerate(gaussians):
        own = pts[small_pipeline["train"].class_indices(c), c, :]
        assert np.allclose(g.mean, own.mean(axis=0))
        assert not g.degenerate


def test_affine_equivariance_of_moments():
    rng = np.random.default_rng(12)
    points = rng.standard_normal((500, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]]) + 3
    amap = np.array([[1.3, -0.2], [0.5, 0.8]])
    shift = np.array([-2.0, 4.0])
    g0 = fit_score_gaussian(points, 0)
    g1 = fit_score_gaussian(points @ amap.T + shift, 0)
    assert np.allclose(g1.mean, amap @ g0.mean + shift, atol=1e-9)
    assert np.allclose(g1.cov, amap @ g0.cov @ amap.T, atol=1e-9)


# -- OOD prior ------------------------------------------------------------------

def test_build_ood_model_constant_values():
    points = np.column_stack([np.full(40, 10.0), np.full(40, 0.5)])
    ood = build_ood_model(points, OODPriorConfig(range_multiplier=3.0))
    assert ood.sigma_lp == pytest.approx(30.0)
    assert ood.sigma_nm == pytest.approx(1.5)


def test_build_ood_model_nearest_rank_quantile():
    lp_vals = np.arange(1.0, 101.0)
    points = np.column_stack([lp_vals, np.full(100, 0.25)])
    ood = build_ood_model(points, OODPriorConfig())
    expected_range = nearest_rank_quantile(np.abs(lp_vals), Fraction(9, 10))
    assert expected_range == 90.0
    assert ood.sigma_lp == pytest.approx(3.0 * expected_range)


def test_build_ood_model_uses_absolute_values():
    points = np.column_stack([-np.arange(1.0, 101.0), np.full(100, 0.25)])
    ood = build_ood_model(points, OODPriorConfig())
    assert ood.sigma_lp == pytest.approx(270.0)


def test_build_ood_model_accepts_score_points():
    points = [ScorePoint(10.0, 0.5) for _ in range(20)]
    ood = build_ood_model(points, OODPriorConfig())
    assert ood.sigma_lp == pytest.approx(30.0)
    assert ood.sigma_nm == pytest.approx(1.5)


def test_build_ood_model_empty_rejected():
    with pytest.raises(DataValidationError, match="empty"):
        build_ood_model(np.zeros((0, 2)), OODPriorConfig())


def test_build_ood_model_sigma_floor():
    points = np.zeros((10, 2))
    ood = build_ood_model(points, OODPriorConfig())
    assert ood.sigma_lp == 1e-6 and ood.sigma_nm == 1e-6


def test_nearest_rank_float_guard():
    # 0.1 * 100000 is a hair above 10000 in binary; the rank must still be 10000
    assert nearest_rank(0.1, 100_000) == 10_000
    assert nearest_rank(0.9, 100) == 90
    assert nearest_rank(0.5, 3) == 2
    assert nearest_rank(1e-9, 100) == 1


# -- likelihood ratio -----------------------------------------------------------

def test_log_ratio_identical_densities_is_zero():
    gaussians = [ClassGaussian(mean=np.zeros(2), cov=25.0 * np.eye(2), class_index=c)
                 for c in range(2)]
    model = _point_model(gaussians, OODGaussian(sigma_lp=5.0, sigma_nm=5.0))
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((50, 2)) * 8
    assert np.allclose(log_likelihood_ratio(model, 0, pts), 0.0, atol=1e-12)


def test_log_ratio_at_origin_isotropic():
    gaussians, ood = _isotropic()
    model = _point_model(gaussians, ood)
    # density quotient at the origin: half the log-determinant ratio
    assert log_likelihood_ratio(model, 0, np.zeros(2)) == pytest.approx(
        math.log(100.0), abs=1e-12)


def test_log_ratio_decays_away_from_id():
    gaussians, ood = _isotropic()
    model = _point_model(gaussians, ood)
    at_origin = log_likelihood_ratio(model, 0, np.zeros(2))
    far = log_likelihood_ratio(model, 0, np.array([1000.0, 0.0]))
    assert far < at_origin
    radii = [0.0, 1.0, 2.0, 5.0, 20.0, 100.0]
    values = [log_likelihood_ratio(model, 0, np.array([r, 0.0])) for r in radii]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_log_ratio_continuity():
    rng = np.random.default_rng(9)
    gaussians = [ClassGaussian(mean=np.array([1.0, 0.5]),
                               cov=np.array([[2.0, 0.3], [0.3, 0.5]]),
                               class_index=0),
                 ClassGaussian(mean=np.zeros(2), cov=np.eye(2), class_index=1)]
    model = _point_model(gaussians, OODGaussian(sigma_lp=30.0, sigma_nm=3.0))
    pts = rng.standard_normal((100, 2)) * 3
    delta = rng.standard_normal((100, 2))
    delta /= np.linalg.norm(delta, axis=1, keepdims=True) * 1e6
    v0 = log_likelihood_ratio(model, 0, pts)
    v1 = log_likelihood_ratio(model, 0, pts + delta)
    assert np.isfinite(v0).all()
    assert np.abs(v1 - v0).max() < 1e-3


# -- calibration ----------------------------------------------------------------

def test_calibrate_chi_square_region():
    gaussians, ood = _isotropic(k=1)
    grid = np.array([0.01, 0.05, 0.10, 0.5])
    config = OODPriorConfig(mc_samples=200_000, seed=123)
    [strategy] = calibrate(gaussians, ood, grid, config)
    mu_05 = strategy.mu_values[list(grid).index(0.05)]
    # log r = ln(100) - 0.495 * ||p||^2, so the acceptance radius^2 is
    radius_sq = 2.0 * (math.log(100.0) - mu_05) / (1.0 - 1.0 / 100.0)
    assert radius_sq == pytest.approx(5.991464547107979, abs=0.1)


def test_calibrate_median_at_half():
    gaussians, ood = _isotropic(k=1)
    config = OODPriorConfig(mc_samples=10_000, seed=7)
    [strategy] = calibrate(gaussians, ood, np.array([0.25, 0.5, 0.75]), config)
    samples = strategy.cdf_samples
    median = samples[nearest_rank(0.5, samples.size) - 1]
    assert strategy.mu_values[1] == median


def test_calibrate_mu_non_decreasing():
    gaussians, ood = _isotropic(k=2)
    config = OODPriorConfig(mc_samples=5_000, seed=3)
    strategies = calibrate(gaussians, ood, np.array([0.01, 0.05, 0.1]), config)
    for s in strategies:
        assert (np.diff(s.mu_values) >= 0).all()


def test_calibrate_empirical_fraction_matches_eps():
    gaussians, ood = _isotropic(k=1)
    config = OODPriorConfig(mc_samples=50_000, seed=11)
    grid = default_epsilon_grid()
    [strategy] = calibrate(gaussians, ood, grid, config)
    tol = 3.0 / math.sqrt(config.mc_samples)
    for eps, mu in zip(strategy.epsilon_grid, strategy.mu_values):
        frac = (strategy.cdf_samples <= mu).mean()
        assert abs(frac - eps) <= tol


def test_calibrate_rejects_tiny_sample_counts():
    gaussians, ood = _isotropic(k=1)
    with pytest.raises(DataValidationError, match="1000"):
        calibrate(gaussians, ood, np.array([0.05]), OODPriorConfig(mc_samples=500))


def test_calibrate_rejects_bad_grids():
    gaussians, ood = _isotropic(k=1)
    config = OODPriorConfig(mc_samples=2_000)
    for grid in ([0.05, 0.05], [0.2, 0.1], [0.0, 0.5], [0.5, 1.0]):
        with pytest.raises(DataValidationError):
            calibrate(gaussians, ood, np.array(grid), config)


def test_calibration_holds_on_fresh_draws():
    # fresh samples from the fitted Gaussian must reject at rate eps within
    # 3 binomial sigmas
    gaussians = [ClassGaussian(mean=np.array([8.0, 0.4]),
                               cov=np.array([[2.0, 0.05], [0.05, 0.01]]),
                               class_index=0)]
    ood = OODGaussian(sigma_lp=25.0, sigma_nm=1.4)
    grid = np.array([0.01, 0.05, 0.10, 0.25, 0.5])
    config = OODPriorConfig(mc_samples=100_000, seed=21)
    [strategy] = calibrate(gaussians, ood, grid, config)
    n = 50_000
    rng = np.random.default_rng(999)
    chol = np.linalg.cholesky(gaussians[0].cov)
    draws = gaussians[0].mean + rng.standard_normal((n, 2)) @ chol.T
    model = _point_model(gaussians + gaussians, ood)  # duplicate for K=2 heads
    ratios = log_likelihood_ratio(model, 0, draws)
    for eps, mu in zip(grid, strategy.mu_values):
        rejection = (ratios <= mu).mean()
        tol = 3.0 * math.sqrt(eps * (1 - eps) / n)
        assert abs(rejection - eps) <= tol, (eps, rejection)


def test_rejection_rate_invariant_under_diagonal_scaling():
    gaussians = [ClassGaussian(mean=np.array([5.0, 0.5]),
                               cov=np.array([[1.5, 0.1], [0.1, 0.02]]),
                               class_index=0)]
    ood = OODGaussian(sigma_lp=20.0, sigma_nm=2.0)
    scale = np.array([3.0, 0.25])
    scaled_gaussians = [ClassGaussian(
        mean=scale * gaussians[0].mean,
        cov=gaussians[0].cov * np.outer(scale, scale),
        class_index=0,
    )]
    scaled_ood = OODGaussian(sigma_lp=ood.sigma_lp * scale[0],
                             sigma_nm=ood.sigma_nm * scale[1])
    grid = np.array([0.02, 0.05, 0.1, 0.3])
    config = OODPriorConfig(mc_samples=100_000, seed=5)
    [s0] = calibrate(gaussians, ood, grid, config)
    [s1] = calibrate(scaled_gaussians, scaled_ood, grid, config)

    n = 50_000
    rng = np.random.default_rng(77)
    chol = np.linalg.cholesky(gaussians[0].cov)
    draws = gaussians[0].mean + rng.standard_normal((n, 2)) @ chol.T
    m0 = _point_model(gaussians * 2, ood)
    m1 = _point_model(scaled_gaussians * 2, scaled_ood)
    r0 = log_likelihood_ratio(m0, 0, draws)
    r1 = log_likelihood_ratio(m1, 0, draws * scale)
    for i, eps in enumerate(grid):
        rej0 = (r0 <= s0.mu_values[i]).mean()
        rej1 = (r1 <= s1.mu_values[i]).mean()
        tol = 2.0 * 3.0 * math.sqrt(eps * (1 - eps) / n)
        assert abs(rej0 - rej1) <= tol


# -- decide / score / predict -----------------------------------------------------

def test_decide_accepts_typical_class_samples(small_pipeline):
    # the most score-typical held-out sample of each class must be accepted
    # and labeled with its own class
    model = small_pipeline["model"]
    test = small_pipeline["test"]
    scores = calibrated_score(model, test.vectors)
    for k in range(3):
        idx = test.class_indices(k)
        best = idx[np.argmax(scores[idx])]
        assert decide(model, test.vectors[best], 0.05) == k


def test_decide_rejects_far_point(small_pipeline):
    model = small_pipeline["model"]
    x = np.full(6, -25.0)
    assert decide(model, x, 0.05) == -1


def test_decide_clamps_out_of_range_eps(small_pipeline):
    model = small_pipeline["model"]
    x = small_pipeline["means"][0]
    with pytest.warns(RuntimeWarning, match="clamped"):
        v_hi = decide(model, x, 1.0)
    with pytest.warns(RuntimeWarning, match="clamped"):
        v_lo = decide(model, x, 0.0)
    grid = model.epsilon_grid
    assert v_hi == decide(model, x, float(grid[-1]))
    assert v_lo == decide(model, x, float(grid[0]))


def test_decide_region_characterization(small_pipeline):
    # accepted iff max_k (log r_k - mu_k(eps)) > 0
    model = small_pipeline["model"]
    rng = np.random.default_rng(31)
    queries = rng.standard_normal((400, 6)) * 4.0
    eps = 0.07  # off-grid: exercises interpolation
    verdicts = decide(model, queries, eps)
    pts = score_points(model.lp_model, model.nm_model, queries)
    margins = np.full(queries.shape[0], -np.inf)
    for c in range(model.class_count):
        mu = np.interp(eps, model.strategies[c].epsilon_grid,
                       model.strategies[c].mu_values)
        margins = np.maximum(margins, log_likelihood_ratio(model, c, pts[:, c, :]) - mu)
    assert np.array_equal(verdicts >= 0, margins > 0)


def test_monotone_nesting(small_pipeline):
    model = small_pipeline["model"]
    rng = np.random.default_rng(13)
    queries = np.vstack([
        small_pipeline["test"].vectors[:300],
        rng.standard_normal((300, 6)) * 5.0,
    ])
    grid = model.epsilon_grid
    accepted_prev = None
    for eps in [grid[0], 0.02, 0.05, 0.1, 0.3, grid[-1]]:
        accepted = decide(model, queries, float(eps)) >= 0
        if accepted_prev is not None:
            assert not (accepted & ~accepted_prev).any()
        accepted_prev = accepted


def test_score_threshold_reproduces_decide(small_pipeline):
    model = small_pipeline["model"]
    rng = np.random.default_rng(41)
    queries = np.vstack([
        small_pipeline["test"].vectors[:500],
        rng.standard_normal((500, 6)) * 6.0,
    ])
    scores = calibrated_score(model, queries)
    for eps in model.epsilon_grid:
        accepted = decide(model, queries, float(eps)) >= 0
        assert np.array_equal(accepted, scores >= eps)


def test_calibrated_score_range_and_extremes(small_pipeline):
    model = small_pipeline["model"]
    scores = calibrated_score(model, small_pipeline["test"].vectors)
    assert ((scores >= 0) & (scores <= 1)).all()
    # well-calibrated ID data spreads over the unit interval; its upper tail
    # must reach near 1
    assert scores.max() > 0.99
    # far below the ID support the score is exactly zero
    assert calibrated_score(model, np.full(6, -25.0)) == 0.0


def test_predict_class_at_means(small_pipeline):
    model = small_pipeline["model"]
    for k in range(3):
        assert predict_class(model, small_pipeline["means"][k]) == k


def test_predict_class_tie_breaks_low():
    gaussians, ood = _isotropic(k=2)
    model = _point_model(gaussians, ood)
    assert predict_class(model, np.array([0.3, 0.4])) == 0


def test_uncalibrated_model_rejected():
    gaussians, ood = _isotropic(k=2)
    model = _point_model(gaussians, ood, strategies=())
    with pytest.raises(DataValidationError, match="not calibrated"):
        decide(model, np.zeros(2), 0.05)
    with pytest.raises(DataValidationError, match="not calibrated"):
        calibrated_score(model, np.zeros(2))


def test_default_epsilon_grid_shape():
    grid = default_epsilon_grid()
    assert grid.size == 55
    assert grid[0] == pytest.approx(1e-3)
    assert grid[-1] == pytest.approx(0.99)
    assert (np.diff(grid) > 0).all()


def test_fit_grood_end_to_end(small_pipeline):
    model = small_pipeline["model"]
    assert model.class_count == 3
    assert len(model.strategies) == 3
    own = own_class_points(model.lp_model, model.nm_model, small_pipeline["train"])
    assert own.shape == (len(small_pipeline["train"]), 2)
    # ID test data overwhelmingly accepted at a loose epsilon
    verdicts = decide(model, small_pipeline["test"].vectors, 0.05)
    assert (verdicts >= 0).mean() > 0.9
