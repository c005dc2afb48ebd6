"""Calibrated OOD detection in the 2-D space of probe logit and mean similarity.

For every ID class k the pair (class-k logit, class-k similarity) of its
training samples is modelled as a bivariate Gaussian. A broad zero-mean
diagonal Gaussian stands in for the unknown OOD score distribution. Each
class then gets a likelihood-ratio threshold table mu(eps), built from seeded
Monte-Carlo quantiles of the log-ratio under the class Gaussian, so that the
class false-rejection rate equals a user-chosen eps uniformly across classes.

A sample is declared ID when any class strategy accepts it; its continuous
score is the best per-class empirical CDF value of the log-ratio, which
thresholds at eps to exactly the same verdicts.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingSet
from .errors import DataValidationError, NumericError
from .linear_probe import LinearProbeModel, lp_logits
from .nearest_mean import NearestMeanModel, nm_similarity

LOG_2PI = math.log(2.0 * math.pi)

# covariance regularization: add lam*I when the smallest eigenvalue
# drops below this floor
_EIG_FLOOR = 1e-9
_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class ScorePoint:
    """Class-conditional coordinates of one sample: (logit, similarity)."""

    lp: float
    nm: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lp, self.nm])


@dataclass(frozen=True)
class ClassGaussian:
    """ML-fitted bivariate Gaussian of one class's score points."""

    mean: np.ndarray             # (2,)
    cov: np.ndarray              # (2, 2) symmetric positive-definite
    class_index: int
    degenerate: bool = False     # covariance needed regularization

    def __post_init__(self):
        if self.mean.shape != (2,) or self.cov.shape != (2, 2):
            raise DataValidationError("ClassGaussian must be bivariate")
        if abs(self.cov[0, 1] - self.cov[1, 0]) > 1e-12:
            raise NumericError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise NumericError("covariance is not positive-definite")
        self.mean.setflags(write=False)
        self.cov.setflags(write=False)


@dataclass(frozen=True)
class OODGaussian:
    """Zero-mean diagonal Gaussian used as the OOD score prior."""

    sigma_lp: float
    sigma_nm: float

    def __post_init__(self):
        if self.sigma_lp <= 0 or self.sigma_nm <= 0:
            raise DataValidationError("OOD prior variances must be positive")

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def cov(self) -> np.ndarray:
        return np.diag([self.sigma_lp ** 2, self.sigma_nm ** 2])


@dataclass(frozen=True)
class OODPriorConfig:
    range_quantile: float = 0.90
    range_multiplier: float = 3.0
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.range_quantile < 1:
            raise DataValidationError("range_quantile must be in (0, 1)")
        if self.range_multiplier < 1:
            raise DataValidationError("range_multiplier must be >= 1")
        if self.mc_samples < 1:
            raise DataValidationError("mc_samples must be positive")
        if self.seed < 0:
            raise DataValidationError("seed must be nonnegative")


@dataclass(frozen=True)
class ClassStrategy:
    """Per-class threshold table mu(eps) plus the Monte-Carlo CDF support."""

    class_index: int
    epsilon_grid: np.ndarray     # ascending, in (0, 1)
    mu_values: np.ndarray        # non-decreasing log-ratio thresholds
    cdf_samples: np.ndarray      # sorted log-ratios under the class Gaussian

    def __post_init__(self):
        for arr in (self.epsilon_grid, self.mu_values, self.cdf_samples):
            arr.setflags(write=False)


@dataclass(frozen=True)
class GroodModel:
    class_gaussians: tuple[ClassGaussian, ...]
    ood: OODGaussian
    strategies: tuple[ClassStrategy, ...]
    lp_model: LinearProbeModel
    nm_model: NearestMeanModel
    calibration_config: OODPriorConfig | None = None
    class_names: dict[int, str] | None = None

    def __post_init__(self):
        k = len(self.class_gaussians)
        if k == 0:
            raise DataValidationError("model has no fitted class Gaussians")
        if self.strategies and len(self.strategies) != k:
            raise DataValidationError("strategy count != class count")
        if self.lp_model.class_count != k or self.nm_model.class_count != k:
            raise DataValidationError("classifier class counts disagree with K")

    @property
    def class_count(self) -> int:
        return len(self.class_gaussians)

    @property
    def epsilon_grid(self) -> np.ndarray:
        self._require_calibrated()
        return self.strategies[0].epsilon_grid

    def _require_calibrated(self) -> None:
        if not self.strategies:
            raise DataValidationError("model is not calibrated")


def default_epsilon_grid() -> np.ndarray:
    """50 log-spaced points on [1e-3, 0.5] plus a coarse upper tail."""
    grid = np.concatenate([np.geomspace(1e-3, 0.5, 50),
                           [0.6, 0.7, 0.8, 0.9, 0.99]])
    return np.ascontiguousarray(grid)


def _check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise DataValidationError("epsilon grid must be a nonempty 1-D array")
    if (grid <= 0).any() or (grid >= 1).any():
        raise DataValidationError("epsilon grid values must lie in (0, 1)")
    if (np.diff(grid) <= 0).any():
        raise DataValidationError("epsilon grid must be strictly ascending")
    return grid


def nearest_rank(q: float, n: int) -> int:
    """1-based nearest-rank index of quantile q in a sorted n-sample.

    The 1e-9 back-off absorbs float roundoff in q*n (0.1 * 100000 is a hair
    above 10000 in binary) so exact-fraction quantiles land on the intended
    rank.
    """
    if n < 1:
        raise DataValidationError("empty sample")
    r = math.ceil(q * n - 1e-9)
    return min(max(r, 1), n)


def _coverage_rank(eps: float, n: int) -> int:
    """Smallest 1-based r with float(r/n) >= float(eps).

    Thresholding the empirical CDF count/n at eps then agrees exactly with
    comparing against the sorted sample at index r-1.
    """
    r = nearest_rank(eps, n)
    while r > 1 and (r - 1) / n >= eps:
        r -= 1
    while r < n and r / n < eps:
        r += 1
    return r


def _check_pair(lp_model: LinearProbeModel, nm_model: NearestMeanModel) -> int:
    if lp_model.dim != nm_model.dim:
        raise DataValidationError("LP and NM models disagree on input dim")
    if lp_model.class_count != nm_model.class_count:
        raise DataValidationError("LP and NM models disagree on class count")
    return lp_model.class_count


def score_points(
    lp_model: LinearProbeModel, nm_model: NearestMeanModel, x: np.ndarray
) -> np.ndarray:
    """All-class score coordinates: (N, D) -> (N, K, 2), (D,) -> (K, 2)."""
    _check_pair(lp_model, nm_model)
    logits = lp_logits(lp_model, x)
    sims = nm_similarity(nm_model, x)
    return np.stack([logits, sims], axis=-1)


def score_point(
    lp_model: LinearProbeModel, nm_model: NearestMeanModel, x: np.ndarray, k: int
) -> ScorePoint:
    """Class-k coordinates of one sample: (logit_k, similarity_k)."""
    kk = _check_pair(lp_model, nm_model)
    if not 0 <= k < kk:
        raise DataValidationError(f"class index {k} out of range [0, {kk})")
    pts = score_points(lp_model, nm_model, np.asarray(x))
    if pts.ndim != 2:
        raise DataValidationError("score_point takes a single (D,) sample")
    return ScorePoint(float(pts[k, 0]), float(pts[k, 1]))


def _regularize_cov(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    cov = (cov + cov.T) / 2.0
    eigs = np.linalg.eigvalsh(cov)
    if eigs.min() >= _EIG_FLOOR:
        return cov, False
    lam = max(_EIG_FLOOR, 1e-6 * np.trace(cov) / 2.0)
    return cov + lam * np.eye(2), True


def fit_score_gaussian(points: np.ndarray, class_index: int) -> ClassGaussian:
    """ML mean and covariance (divide by N) of one class's (N, 2) points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise DataValidationError("expected an (N, 2) array of score points")
    if points.shape[0] < 2:
        raise DataValidationError(
            f"class {class_index} has {points.shape[0]} training records; need >= 2"
        )
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / points.shape[0]
    cov, flagged = _regularize_cov(cov)
    return ClassGaussian(mean=mean, cov=cov, class_index=class_index,
                         degenerate=flagged)


def fit_class_gaussians(
    lp_model: LinearProbeModel,
    nm_model: NearestMeanModel,
    id_train: EmbeddingSet,
) -> list[ClassGaussian]:
    """Per-class ML mean and covariance of own-class score points."""
    k = _check_pair(lp_model, nm_model)
    if id_train.class_count != k:
        raise DataValidationError("training classes disagree with model heads")
    pts = score_points(lp_model, nm_model, id_train.vectors)
    return [
        fit_score_gaussian(pts[id_train.class_indices(c), c, :], c)
        for c in range(k)
    ]


def own_class_points(
    lp_model: LinearProbeModel, nm_model: NearestMeanModel, id_train: EmbeddingSet
) -> np.ndarray:
    """(N, 2) array: each training sample's own-class score point."""
    pts = score_points(lp_model, nm_model, id_train.vectors)
    n = len(id_train)
    return pts[np.arange(n), id_train.labels, :]


def build_ood_model(points, config: OODPriorConfig) -> OODGaussian:
    """OOD prior from the spread of ID score points.

    Per axis: sigma = range_multiplier * nearest-rank quantile of |values| at
    range_quantile, floored at 1e-6. Accepts an (N, 2) array or a sequence
    of ScorePoint.
    """
    if len(points) and isinstance(points[0], ScorePoint):
        points = [(p.lp, p.nm) for p in points]
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise DataValidationError("cannot build OOD prior from an empty point list")
    if points.ndim != 2 or points.shape[1] != 2:
        raise DataValidationError("expected an (N, 2) array of score points")
    sigmas = []
    r = nearest_rank(config.range_quantile, points.shape[0])
    for axis in range(2):
        mags = np.sort(np.abs(points[:, axis]))
        rng = mags[r - 1]
        sigmas.append(max(config.range_multiplier * rng, _SIGMA_FLOOR))
    return OODGaussian(sigma_lp=sigmas[0], sigma_nm=sigmas[1])


def _gauss2_logpdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of a 2-D Gaussian at points (..., 2), closed form."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if det <= 0:
        raise NumericError("covariance determinant is not positive")
    dx = points[..., 0] - mean[0]
    dy = points[..., 1] - mean[1]
    quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * math.log(det) - 0.5 * quad


def _ood_logpdf(points: np.ndarray, ood: OODGaussian) -> np.ndarray:
    zx = points[..., 0] / ood.sigma_lp
    zy = points[..., 1] / ood.sigma_nm
    return (-LOG_2PI - math.log(ood.sigma_lp) - math.log(ood.sigma_nm)
            - 0.5 * (zx * zx + zy * zy))


def log_likelihood_ratio(model: GroodModel, k: int, p) -> float | np.ndarray:
    """log p(point | class-k Gaussian) - log p(point | OOD prior)."""
    if not 0 <= k < model.class_count:
        raise DataValidationError(f"class index {k} out of range")
    if isinstance(p, ScorePoint):
        p = p.as_array()
    pts = np.asarray(p, dtype=np.float64)
    g = model.class_gaussians[k]
    ratio = _gauss2_logpdf(pts, g.mean, g.cov) - _ood_logpdf(pts, model.ood)
    return float(ratio) if ratio.ndim == 0 else ratio


def _log_ratios_all(model: GroodModel, points_nk2: np.ndarray) -> np.ndarray:
    """(N, K, 2) class-conditional points -> (N, K) log-likelihood ratios."""
    n, k, _ = points_nk2.shape
    out = np.empty((n, k))
    for c, g in enumerate(model.class_gaussians):
        pts = points_nk2[:, c, :]
        out[:, c] = _gauss2_logpdf(pts, g.mean, g.cov) - _ood_logpdf(pts, model.ood)
    return out


def calibrate(
    class_gaussians: list[ClassGaussian] | tuple[ClassGaussian, ...],
    ood: OODGaussian,
    epsilon_grid: np.ndarray,
    config: OODPriorConfig,
) -> list[ClassStrategy]:
    """Monte-Carlo threshold tables mu(eps) for every class.

    Draws config.mc_samples points from each class Gaussian (seeded per
    class), takes their log-likelihood ratios against the OOD prior, and
    reads mu(eps) off the sorted sample at the eps coverage rank. mu is
    non-decreasing in eps by construction.
    """
    grid = _check_grid(epsilon_grid)
    if config.mc_samples < 1000:
        raise DataValidationError(
            "mc_samples below 1000 makes quantile estimates too noisy"
        )
    n = config.mc_samples
    strategies = []
    for g in class_gaussians:
        rng = np.random.default_rng([config.seed, g.class_index])
        chol = np.linalg.cholesky(g.cov)
        draws = g.mean + rng.standard_normal((n, 2)) @ chol.T
        ratios = _gauss2_logpdf(draws, g.mean, g.cov) - _ood_logpdf(draws, ood)
        samples = np.sort(ratios)
        mu = np.array([samples[_coverage_rank(eps, n) - 1] for eps in grid])
        strategies.append(ClassStrategy(
            class_index=g.class_index,
            epsilon_grid=grid.copy(),
            mu_values=mu,
            cdf_samples=samples,
        ))
    return strategies


def fit_grood(
    lp_model: LinearProbeModel,
    nm_model: NearestMeanModel,
    id_train: EmbeddingSet,
    ood_config: OODPriorConfig | None = None,
    epsilon_grid: np.ndarray | None = None,
) -> GroodModel:
    """End-to-end fit: class Gaussians, OOD prior, calibration tables."""
    ood_config = ood_config or OODPriorConfig()
    grid = default_epsilon_grid() if epsilon_grid is None else _check_grid(epsilon_grid)
    gaussians = fit_class_gaussians(lp_model, nm_model, id_train)
    ood = build_ood_model(own_class_points(lp_model, nm_model, id_train), ood_config)
    strategies = calibrate(gaussians, ood, grid, ood_config)
    return GroodModel(
        class_gaussians=tuple(gaussians),
        ood=ood,
        strategies=tuple(strategies),
        lp_model=lp_model,
        nm_model=nm_model,
        calibration_config=ood_config,
        class_names=id_train.class_names,
    )


def _clamp_eps(model: GroodModel, eps: float) -> float:
    grid = model.epsilon_grid
    if eps < grid[0] or eps > grid[-1]:
        clamped = float(min(max(eps, grid[0]), grid[-1]))
        warnings.warn(
            f"epsilon {eps} outside calibrated range "
            f"[{grid[0]:g}, {grid[-1]:g}]; clamped to {clamped:g}",
            RuntimeWarning,
            stacklevel=3,
        )
        return clamped
    return float(eps)


def _query_points(model: GroodModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    pts = score_points(model.lp_model, model.nm_model, x)
    single = pts.ndim == 2
    if single:
        pts = pts[None, ...]
    return pts, single


def decide(model: GroodModel, x: np.ndarray, eps: float) -> int | np.ndarray:
    """Calibrated verdict at ID false-rejection level eps.

    Returns the predicted class index for samples accepted by at least one
    class strategy (log-ratio above that class's interpolated mu(eps)), or
    -1 for OOD. Accepts one (D,) sample or an (N, D) batch.
    """
    model._require_calibrated()
    eps = _clamp_eps(model, eps)
    pts, single = _query_points(model, x)
    ratios = _log_ratios_all(model, pts)
    mus = np.array([
        np.interp(eps, s.epsilon_grid, s.mu_values) for s in model.strategies
    ])
    accepted = (ratios > mus).any(axis=1)
    verdicts = np.where(accepted, _predict_from_points(model, pts), -1).astype(np.int32)
    return int(verdicts[0]) if single else verdicts


def calibrated_score(model: GroodModel, x: np.ndarray) -> float | np.ndarray:
    """Best per-class empirical CDF of the log-ratio, in [0, 1].

    Thresholding this score at a grid eps (score >= eps accepted) reproduces
    decide(..., eps) exactly.
    """
    model._require_calibrated()
    pts, single = _query_points(model, x)
    ratios = _log_ratios_all(model, pts)
    n = model.strategies[0].cdf_samples.size
    cdf = np.empty_like(ratios)
    for c, s in enumerate(model.strategies):
        cdf[:, c] = np.searchsorted(s.cdf_samples, ratios[:, c], side="right") / n
    best = cdf.max(axis=1)
    return float(best[0]) if single else best


def _predict_from_points(model: GroodModel, pts: np.ndarray) -> np.ndarray:
    n, k, _ = pts.shape
    dens = np.empty((n, k))
    for c, g in enumerate(model.class_gaussians):
        dens[:, c] = _gauss2_logpdf(pts[:, c, :], g.mean, g.cov)
    return np.argmax(dens, axis=1)


def predict_class(model: GroodModel, x: np.ndarray) -> int | np.ndarray:
    """ID class by highest class-Gaussian log-density; ties to lowest index."""
    pts, single = _query_points(model, x)
    pred = _predict_from_points(model, pts).astype(np.int32)
    return int(pred[0]) if single else pred
