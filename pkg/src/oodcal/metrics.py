"""Detection and classification metrics over scored samples.

Threshold convention used by every function here: a sample is accepted when
its score >= threshold (ties accept); rejection means score < threshold.
All metrics are rank statistics, invariant to strictly increasing score
transforms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataValidationError

THRESHOLD_CONVENTION = "accept if score >= threshold; reject if score < threshold"


@dataclass(frozen=True)
class ScoredSample:
    """One evaluated sample. true_label -1 marks OOD; predicted_label may be
    -1 (rejected) or None when the scorer makes no class prediction."""

    score: float
    true_label: int
    predicted_label: int | None = None


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    fpr95: float
    oscr: float
    acc: float
    per_class_rejection: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "oscr": self.oscr,
            "acc": self.acc,
            "per_class_rejection": {
                str(k): [[float(t), float(r)] for t, r in curve]
                for k, curve in sorted(self.per_class_rejection.items())
            },
            "threshold_convention": THRESHOLD_CONVENTION,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def rejection_csv_rows(self) -> list[tuple[int, float, float]]:
        rows = []
        for k in sorted(self.per_class_rejection):
            for threshold, rate in self.per_class_rejection[k]:
                rows.append((k, float(threshold), float(rate)))
        return rows


def _scores_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DataValidationError(f"{name} score list is empty")
    if not np.isfinite(arr).all():
        raise DataValidationError(f"{name} scores contain non-finite values")
    return arr


def auroc(id_scores, ood_scores) -> float:
    """Probability a random ID sample outscores a random OOD one, ties at 1/2.

    Computed through the rank form of the Mann-Whitney statistic, which
    equals exhaustive pair counting exactly.
    """
    ids = _scores_array(id_scores, "ID")
    oods = _scores_array(ood_scores, "OOD")
    ranks = rankdata(np.concatenate([ids, oods]))
    u = ranks[: ids.size].sum() - ids.size * (ids.size + 1) / 2.0
    return float(u / (ids.size * oods.size))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """OOD acceptance rate at the loosest threshold keeping the target TPR.

    The threshold is the largest value tau with fraction(id >= tau) >=
    tpr_target, i.e. the ceil(tpr_target * n)-th largest ID score.
    """
    ids = _scores_array(id_scores, "ID")
    oods = _scores_array(ood_scores, "OOD")
    if not 0 < tpr_target <= 1:
        raise DataValidationError("tpr_target must be in (0, 1]")
    k = _guarded_ceil(tpr_target * ids.size)
    k = min(max(k, 1), ids.size)
    tau = np.sort(ids)[::-1][k - 1]
    return float((oods >= tau).mean())


def _guarded_ceil(value: float) -> int:
    # absorb float roundoff so exact fractions land on the intended rank
    return int(np.ceil(value - 1e-9))


def _split_id_arrays(id_samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(id_samples) == 0:
        raise DataValidationError("no ID samples")
    scores = np.array([s.score for s in id_samples], dtype=np.float64)
    true = np.array([s.true_label for s in id_samples], dtype=np.int64)
    if any(s.predicted_label is None for s in id_samples):
        raise DataValidationError("ID samples are missing class predictions")
    pred = np.array([s.predicted_label for s in id_samples], dtype=np.int64)
    if (true < 0).any():
        raise DataValidationError("ID samples must have nonnegative true labels")
    if not np.isfinite(scores).all():
        raise DataValidationError("ID scores contain non-finite values")
    return scores, true, pred


def oscr(id_samples, ood_scores) -> float:
    """Area under the correct-classification-rate vs false-positive-rate curve.

    Sweeps every distinct observed score plus a -inf sentinel as the
    acceptance threshold; CCR at a threshold is the fraction of all ID
    samples that are correctly classified and accepted, FPR the fraction of
    OOD samples accepted. Trapezoidal area in FPR order.
    """
    scores, true, pred = _split_id_arrays(id_samples)
    oods = _scores_array(ood_scores, "OOD")
    correct_scores = np.sort(scores[pred == true])
    ood_sorted = np.sort(oods)
    n_id, n_ood = scores.size, oods.size

    thresholds = np.unique(np.concatenate([scores, oods]))[::-1]
    ccr = (correct_scores.size
           - np.searchsorted(correct_scores, thresholds, side="left")) / n_id
    fpr = (n_ood - np.searchsorted(ood_sorted, thresholds, side="left")) / n_ood
    # -inf sentinel: everything accepted
    ccr = np.append(ccr, correct_scores.size / n_id)
    fpr = np.append(fpr, 1.0)
    order = np.lexsort((ccr, fpr))
    return float(np.trapezoid(ccr[order], fpr[order]))


def accuracy(id_samples) -> float:
    """Fraction of ID samples whose predicted class matches the true class."""
    _, true, pred = _split_id_arrays(id_samples)
    return float((pred == true).mean())


def per_class_rejection_curve(id_samples, thresholds) -> dict[int, list[tuple[float, float]]]:
    """Per-class rejection rate (fraction with score < tau) at each tau."""
    scores, true, _ = _split_id_arrays(id_samples)
    taus = np.asarray(thresholds, dtype=np.float64)
    if taus.size == 0:
        raise DataValidationError("no thresholds given")
    curves: dict[int, list[tuple[float, float]]] = {}
    for k in sorted(set(true.tolist())):
        cls = scores[true == k]
        if cls.size == 0:
            raise DataValidationError(f"class {k} has no samples")
        curves[int(k)] = [(float(t), float((cls < t).mean())) for t in taus]
    return curves


def build_report(id_samples, ood_scores, rejection_thresholds) -> EvalReport:
    """Assemble the full report from scored ID samples and OOD scores."""
    return EvalReport(
        auroc=auroc([s.score for s in id_samples], ood_scores),
        fpr95=fpr_at_tpr([s.score for s in id_samples], ood_scores),
        oscr=oscr(id_samples, ood_scores),
        acc=accuracy(id_samples),
        per_class_rejection=per_class_rejection_curve(id_samples, rejection_thresholds),
    )


def roc_curve_points(id_scores, ood_scores) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) at every distinct score, threshold descending."""
    ids = np.sort(_scores_array(id_scores, "ID"))
    oods = np.sort(_scores_array(ood_scores, "OOD"))
    thresholds = np.unique(np.concatenate([ids, oods]))[::-1]
    tpr = (ids.size - np.searchsorted(ids, thresholds, side="left")) / ids.size
    fpr = (oods.size - np.searchsorted(oods, thresholds, side="left")) / oods.size
    return [(float(t), float(f), float(p)) for t, f, p in zip(thresholds, fpr, tpr)]
