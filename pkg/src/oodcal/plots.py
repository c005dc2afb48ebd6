"""Figure rendering for the report path.

Writes PNG files next to the CSV tables; uses the Agg backend so reports
render on headless machines.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_rejection_figure(path, raw_curves, calibrated_curves, title_suffix="") -> None:
    """Side-by-side per-class rejection curves: raw max-logit vs calibrated.

    Both arguments map class -> list of (threshold, rejection-rate). The
    calibrated panel plots rejection against the requested epsilon, with the
    ideal diagonal for reference.
    """
    fig, (ax_raw, ax_cal) = plt.subplots(1, 2, figsize=(9.6, 4.0))
    for k, curve in sorted(raw_curves.items()):
        taus = [t for t, _ in curve]
        rates = [r for _, r in curve]
        ax_raw.plot(taus, rates, marker="o", markersize=3, label=f"class {k}")
    ax_raw.set_xlabel("max-logit threshold")
    ax_raw.set_ylabel("class rejection rate")
    ax_raw.set_title("raw max-logit" + title_suffix)
    ax_raw.legend(fontsize=8)

    for k, curve in sorted(calibrated_curves.items()):
        eps = [t for t, _ in curve]
        rates = [r for _, r in curve]
        ax_cal.plot(eps, rates, marker="o", markersize=3, label=f"class {k}")
    if calibrated_curves:
        eps = [t for t, _ in next(iter(calibrated_curves.values()))]
        ax_cal.plot(eps, eps, linestyle="--", color="gray", linewidth=1,
                    label="target")
    ax_cal.set_xlabel("requested rejection rate")
    ax_cal.set_ylabel("class rejection rate")
    ax_cal.set_title("calibrated" + title_suffix)
    ax_cal.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_roc_figure(path, roc_points, auroc_value: float) -> None:
    """ROC curve from (threshold, FPR, TPR) triples."""
    fpr = [f for _, f, _ in roc_points]
    tpr = [t for _, _, t in roc_points]
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    ax.plot(fpr, tpr, linewidth=1.5)
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate (OOD accepted)")
    ax.set_ylabel("true positive rate (ID accepted)")
    ax.set_title(f"ROC (AUROC = {auroc_value:.4f})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
