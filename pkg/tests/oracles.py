"""Independent brute-force oracles used to pin expected metric values.

Everything here is deliberately naive (pair loops, exhaustive threshold
sweeps, Fraction arithmetic) and must stay independent of the library code
it checks.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def pair_count_auroc(id_scores, ood_scores) -> float:
    """AUROC by counting all (id, ood) pairs; ties half-credited."""
    wins = 0.0
    for a in id_scores:
        for b in ood_scores:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(id_scores) * len(ood_scores))


def pair_count_auroc_fast(id_scores, ood_scores) -> float:
    """Same exhaustive pair count, vectorized for large instances."""
    ids = np.asarray(id_scores)[:, None]
    oods = np.asarray(ood_scores)[None, :]
    wins = (ids > oods).sum() + 0.5 * (ids == oods).sum()
    return float(wins / (ids.size * oods.size))


def sweep_fpr_at_tpr(id_scores, ood_scores, tpr_target: float) -> float:
    """Scan every candidate threshold for the largest one meeting the TPR."""
    ids = list(id_scores)
    best_tau = None
    for tau in sorted(set(ids), reverse=True):
        tpr = sum(1 for s in ids if s >= tau) / len(ids)
        if Fraction(tpr).limit_denominator(10 ** 12) >= Fraction(str(tpr_target)):
            best_tau = tau
            break
    if best_tau is None:
        best_tau = min(ids)
    return sum(1 for s in ood_scores if s >= best_tau) / len(ood_scores)


def sweep_oscr(id_scores, id_correct, ood_scores) -> float:
    """Exhaustive threshold enumeration of the CCR-vs-FPR area.

    Thresholds are every distinct observed score plus a -inf sentinel,
    walked in descending order so FPR is non-decreasing; trapezoidal area.
    """
    id_scores = list(id_scores)
    id_correct = list(id_correct)
    ood_scores = list(ood_scores)
    thresholds = sorted(set(id_scores) | set(ood_scores), reverse=True)
    thresholds.append(float("-inf"))
    points = []
    for theta in thresholds:
        ccr = sum(1 for s, ok in zip(id_scores, id_correct) if ok and s >= theta)
        fpr = sum(1 for s in ood_scores if s >= theta)
        points.append((fpr / len(ood_scores), ccr / len(id_scores)))
    area = 0.0
    for (f0, c0), (f1, c1) in zip(points, points[1:]):
        area += (f1 - f0) * (c0 + c1) / 2.0
    return area


def central_difference_gradient(fun, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (fun(up) - fun(dn)) / (2.0 * step)
    return grad


def nearest_rank_quantile(values, q: Fraction) -> float:
    """Nearest-rank quantile with exact Fraction rank arithmetic."""
    ordered = sorted(values)
    n = len(ordered)
    rank = -((-q * n) // 1)  # ceil for Fractions
    rank = min(max(int(rank), 1), n)
    return ordered[rank - 1]
