"""Nearest-mean classifier over embeddings.

Per-class mean vectors; queries are scored by L2 distance d and the bounded
similarity 1 / (1 + d). One mean per class; multi-cluster classes are a
documented limitation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingSet
from .errors import DataValidationError, NumericError


@dataclass(frozen=True)
class NearestMeanModel:
    means: np.ndarray            # (K, D) float64
    class_count: int
    dim: int
    l2_normalize_inputs: bool = False

    def __post_init__(self):
        if self.class_count < 1:
            raise DataValidationError("need at least one class")
        if not np.isfinite(self.means).all():
            raise NumericError("class means are not finite")
        self.means.setflags(write=False)


def fit_nm(train: EmbeddingSet, l2_normalize_inputs: bool = False) -> NearestMeanModel:
    """Arithmetic per-class means, accumulated in float64."""
    k = train.class_count
    if k < 1:
        raise DataValidationError("training set has no labeled classes")
    x = train.vectors.astype(np.float64)
    if l2_normalize_inputs:
        x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-30)
    means = np.empty((k, train.dim))
    for c in range(k):
        idx = train.class_indices(c)
        if idx.size == 0:
            raise DataValidationError(f"class {c} has no training records")
        means[c] = x[idx].mean(axis=0)
    return NearestMeanModel(means=means, class_count=k, dim=train.dim,
                            l2_normalize_inputs=l2_normalize_inputs)


def _as_queries(model: NearestMeanModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
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
    if model.l2_normalize_inputs:
        x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-30)
    return x, single


def nm_distance(model: NearestMeanModel, x: np.ndarray) -> np.ndarray:
    """L2 distance to each class mean. (D,) -> (K,), (N, D) -> (N, K)."""
    q, single = _as_queries(model, x)
    n = q.shape[0]
    d = np.empty((n, model.class_count))
    # difference-based form is translation-exact; chunk to bound the
    # (chunk, K, D) temporary for wide embeddings
    chunk = max(1, int(2 ** 22 / max(1, model.class_count * model.dim)))
    for start in range(0, n, chunk):
        block = q[start:start + chunk]
        diff = block[:, None, :] - model.means[None, :, :]
        d[start:start + chunk] = np.sqrt((diff ** 2).sum(axis=2))
    return d[0] if single else d


def nm_similarity(model: NearestMeanModel, x: np.ndarray) -> np.ndarray:
    """Similarity 1 / (1 + d), strictly decreasing in distance, in (0, 1]."""
    return 1.0 / (1.0 + nm_distance(model, x))


def nm_predict(model: NearestMeanModel, x: np.ndarray) -> int | np.ndarray:
    """Class of the nearest mean; ties break to the lowest class index."""
    d = nm_distance(model, x)
    pred = np.argmin(d, axis=-1)
    return int(pred) if pred.ndim == 0 else pred.astype(np.int32)
