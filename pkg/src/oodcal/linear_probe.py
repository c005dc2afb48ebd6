"""Multinomial logistic-regression linear probe.

A single linear projection plus softmax, trained full-batch on ID embeddings
with a deterministic quasi-Newton solver. The maximum logit doubles as an
OOD score.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .dataset import EmbeddingSet
from .errors import DataValidationError, NumericError


@dataclass(frozen=True)
class LPTrainConfig:
    l2_strength: float = 1e-3
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-6
    seed: int = 0
    l2_normalize_inputs: bool = False

    def __post_init__(self):
        if self.l2_strength < 0:
            raise DataValidationError("l2_strength must be nonnegative")
        if self.max_iterations < 1:
            raise DataValidationError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0:
            raise DataValidationError("gradient_tolerance must be positive")
        if self.seed < 0:
            raise DataValidationError("seed must be nonnegative")


@dataclass(frozen=True)
class LinearProbeModel:
    """Trained probe: logits(x) = weights @ x + bias, float64 throughout."""

    weights: np.ndarray          # (K, D)
    bias: np.ndarray             # (K,)
    class_count: int
    dim: int
    train_config: LPTrainConfig
    converged: bool = True
    final_gradient_norm: float = 0.0

    def __post_init__(self):
        if self.class_count < 2 or self.dim < 1:
            raise DataValidationError("need K >= 2 and D >= 1")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError("linear probe parameters are not finite")
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _maybe_normalize(x: np.ndarray, enabled: bool) -> np.ndarray:
    if not enabled:
        return x
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-30)


def _design_matrix(batch: EmbeddingSet, normalize: bool) -> np.ndarray:
    x = batch.vectors.astype(np.float64)
    return _maybe_normalize(x, normalize)


def _loss_grad(weights, bias, x, labels, l2_strength):
    """Mean softmax cross-entropy + (l2/2)*||W||_F^2 and its exact gradient."""
    n = x.shape[0]
    logits = x @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(n), labels].mean() + 0.5 * l2_strength * (weights ** 2).sum()

    p = np.exp(log_p)
    p[np.arange(n), labels] -= 1.0
    p /= n
    grad_w = p.T @ x + l2_strength * weights
    grad_b = p.sum(axis=0)
    return loss, grad_w, grad_b


def lp_loss_and_gradient(
    model: LinearProbeModel, batch: EmbeddingSet, l2_strength: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective and analytic gradient at the model's parameters."""
    if len(batch) == 0:
        raise DataValidationError("empty batch")
    x = _design_matrix(batch, model.train_config.l2_normalize_inputs)
    labels = np.asarray(batch.labels, dtype=np.int64)
    if (labels < 0).any() or (labels >= model.class_count).any():
        raise DataValidationError("batch labels outside model's class range")
    return _loss_grad(model.weights, model.bias, x, labels, l2_strength)


def train_lp(
    train: EmbeddingSet,
    config: LPTrainConfig | None = None,
    loss_trace: list | None = None,
) -> LinearProbeModel:
    """Fit the probe by full-batch L-BFGS from a zero start.

    Deterministic for fixed config and input order. If the gradient max-norm
    does not reach config.gradient_tolerance within max_iterations, the model
    is still returned, flagged converged=False, with a warning.

    loss_trace, if given, receives the objective value at every accepted
    iterate (useful for monotonicity checks).
    """
    config = config or LPTrainConfig()
    k = train.class_count
    if k < 2:
        raise DataValidationError("single-class input")
    if len(train) == 0:
        raise DataValidationError("empty training set")
    present = set(train.labels.tolist())
    missing = [c for c in range(k) if c not in present]
    if missing:
        raise DataValidationError(f"classes without training records: {missing}")

    x = _design_matrix(train, config.l2_normalize_inputs)
    labels = np.asarray(train.labels, dtype=np.int64)
    d = train.dim

    def unpack(theta):
        return theta[: k * d].reshape(k, d), theta[k * d:]

    def objective(theta):
        w, b = unpack(theta)
        loss, gw, gb = _loss_grad(w, b, x, labels, config.l2_strength)
        return loss, np.concatenate([gw.ravel(), gb])

    callback = None
    if loss_trace is not None:
        def callback(theta):
            w, b = unpack(theta)
            loss, _, _ = _loss_grad(w, b, x, labels, config.l2_strength)
            loss_trace.append(loss)

    theta0 = np.zeros(k * d + k)
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        # ftol=0 disables the function-decrease stop; convergence is decided
        # by the gradient max-norm (gtol) or the iteration cap, per contract.
        options={
            "maxiter": config.max_iterations,
            "ftol": 0.0,
            "gtol": config.gradient_tolerance,
            "maxls": 50,
        },
    )
    weights, bias = unpack(result.x)
    _, gw, gb = _loss_grad(weights, bias, x, labels, config.l2_strength)
    grad_norm = float(max(np.abs(gw).max(), np.abs(gb).max()))
    converged = grad_norm <= config.gradient_tolerance
    if not converged:
        warnings.warn(
            f"linear probe did not converge: gradient max-norm {grad_norm:.3e} "
            f"after {result.nit} iterations (tolerance {config.gradient_tolerance:.1e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return LinearProbeModel(
        weights=np.ascontiguousarray(weights),
        bias=np.ascontiguousarray(bias),
        class_count=k,
        dim=d,
        train_config=config,
        converged=converged,
        final_gradient_norm=grad_norm,
    )


def sweep_l2_strength(
    train: EmbeddingSet,
    config: LPTrainConfig,
    candidates: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1),
    validation_fraction: float = 0.1,
) -> tuple[float, dict[float, float]]:
    """Pick l2_strength by held-out ID accuracy on a seeded split.

    Ties break toward the smaller candidate. Returns (best, {candidate: acc}).
    """
    if not 0 < validation_fraction < 1:
        raise DataValidationError("validation_fraction must be in (0, 1)")
    rng = np.random.default_rng(config.seed)
    n = len(train)
    order = rng.permutation(n)
    n_val = max(1, int(round(validation_fraction * n)))
    val_idx, fit_idx = order[:n_val], order[n_val:]

    def subset(idx):
        return EmbeddingSet(train.dim, train.labels[idx].copy(),
                            train.vectors[idx].copy())

    fit_set, val_set = subset(fit_idx), subset(val_idx)
    if fit_set.class_count < train.class_count:
        raise DataValidationError(
            "validation split removed all records of some class; "
            "lower validation_fraction or disable the sweep"
        )
    scores: dict[float, float] = {}
    for lam in candidates:
        model = train_lp(fit_set, replace(config, l2_strength=lam))
        preds = lp_predict(model, val_set.vectors)
        scores[lam] = float((preds == val_set.labels).mean())
    best = max(sorted(candidates), key=lambda lam: (scores[lam], -lam))
    return best, scores


def _as_queries(model: LinearProbeModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DataValidationError(
            f"query dimension {x.shape[-1] if x.ndim else 0} != model dim {model.dim}"
        )
    if not np.isfinite(x).all():
        raise DataValidationError("query contains non-finite values")
    return _maybe_normalize(x, model.train_config.l2_normalize_inputs), single


def lp_logits(model: LinearProbeModel, x: np.ndarray) -> np.ndarray:
    """Logits weights @ x + bias. Accepts one (D,) query or a (N, D) batch."""
    q, single = _as_queries(model, x)
    logits = q @ model.weights.T + model.bias
    return logits[0] if single else logits


def lp_score(model: LinearProbeModel, x: np.ndarray) -> float | np.ndarray:
    """Maximum-logit OOD score (higher = more ID)."""
    logits = lp_logits(model, x)
    score = logits.max(axis=-1)
    return float(score) if np.isscalar(score) or score.ndim == 0 else score


def lp_predict(model: LinearProbeModel, x: np.ndarray) -> int | np.ndarray:
    """Argmax class; ties break to the lowest class index."""
    logits = lp_logits(model, x)
    pred = np.argmax(logits, axis=-1)
    return int(pred) if pred.ndim == 0 else pred.astype(np.int32)
