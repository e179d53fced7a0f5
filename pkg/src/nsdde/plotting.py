"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

METRIC_LABELS = {
    "accuracy": "Accuracy",
    "weighted_f1": "Weighted F1",
    "auroc_novel": "AUROC",
    "auprc_known": "AUPRC",
}


def plot_training_curves(curves, path):
    """Validation accuracy and both losses per epoch, one line per replicate seed."""
    by_seed = defaultdict(list)
    for row in curves:
        by_seed[row["seed"]].append(row)
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for k, (seed, rows) in enumerate(sorted(by_seed.items())):
            color = f"C{k % 10}"
            epochs = [r["epoch"] for r in rows]
            ax_loss.plot(epochs, [r["train_loss"] for r in rows], color=color, lw=1, label=f"seed {seed}")
            ax_loss.plot(epochs, [r["val_loss"] for r in rows], color=color, lw=1, ls="--")
            ax_acc.plot(epochs, [r["val_accuracy"] for r in rows], color=color, lw=1)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("cross-entropy (solid train, dashed val)")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("validation accuracy")
        ax_loss.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_sensitivity(rows, path):
    """Metric vs tau: solid line for the delayed model, dashed horizontal line for the no-delay baseline."""
    metrics = [m for m in METRIC_LABELS if any(r["metric"] == m for r in rows)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.0), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            sel = [r for r in rows if r["metric"] == metric]
            taus = sorted({float(r["tau"]) for r in sel if r["model"] == "sdde"})
            vals = [[r["value"] for r in sel if r["model"] == "sdde" and float(r["tau"]) == t] for t in taus]
            mean = np.array([np.mean(v) for v in vals])
            std = np.array([np.std(v, ddof=1) if len(v) > 1 else 0.0 for v in vals])
            ax.plot(taus, mean, "-o", color="C0", ms=3, label="with delay")
            ax.fill_between(taus, mean - std, mean + std, color="C0", alpha=0.2, lw=0)
            base = [r["value"] for r in sel if r["model"] == "lsde"]
            if base:
                ax.axhline(np.mean(base), color="C1", ls="--", label="no delay")
            ax.set_xlabel(r"$\tau$")
            ax.set_ylabel(METRIC_LABELS[metric])
        axes[0][0].legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
