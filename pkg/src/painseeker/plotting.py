"""Matplotlib figures written next to the CSV/text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MetricsReport, accuracy, f1  # noqa: E402
from .training import TrainHistory  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.dpi": 100,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_fold_metrics(reports: Sequence[MetricsReport], path) -> Path:
    """Grouped bars of per-rat and pooled F1 (top) and accuracy (bottom)."""
    with plt.rc_context(STYLE):
        folds = sorted({r for rep in reports for r in rep.per_rat}) + ["LORO"]
        fig, (ax_f1, ax_acc) = plt.subplots(2, 1, figsize=(max(5, 1.0 * len(folds) + 2), 5), sharex=True)
        width = 0.8 / len(reports)
        x = np.arange(len(folds))
        for k, rep in enumerate(reports):
            counts = [rep.pooled if f == "LORO" else rep.per_rat.get(f) for f in folds]
            f1s = [f1(c) if c is not None else np.nan for c in counts]
            accs = [accuracy(c) if c is not None else np.nan for c in counts]
            off = x - 0.4 + width * (k + 0.5)
            ax_f1.bar(off, f1s, width, label=rep.method)
            ax_acc.bar(off, accs, width, label=rep.method)
        ax_f1.set_ylabel("F1-score")
        ax_f1.set_ylim(0, 1)
        ax_acc.set_ylabel("Accuracy (%)")
        ax_acc.set_ylim(0, 100)
        ax_acc.axhline(50, color="0.5", lw=0.8, ls="--")
        ax_acc.set_xticks(x, folds)
        ax_f1.legend(frameon=False, fontsize=7, ncol=min(3, len(reports)))
        return _save(fig, path)


def plot_attention_map(beta_grid: np.ndarray, path, title: str = "", highlight: Optional[Sequence[int]] = None) -> Path:
    """Heatmap of an M x M attention grid; ``highlight`` outlines region indices."""
    grid = np.asarray(beta_grid)
    m = grid.shape[0]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3))
        im = ax.imshow(grid, cmap="magma", interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        for r in highlight or ():
            ax.add_patch(plt.Rectangle((r % m - 0.5, r // m - 0.5), 1, 1, fill=False, ec="cyan", lw=1.5))
        for i in range(m):
            for j in range(m):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=6, color="w")
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_training_curves(histories: Mapping[str, TrainHistory], path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.8))
        for rat, h in sorted(histories.items()):
            epochs = np.arange(1, len(h) + 1)
            axes[0].plot(epochs, h.mean_ce, label=rat, lw=1)
            axes[1].plot(epochs, h.mean_prsc, label=rat, lw=1)
        axes[0].set_ylabel("mean CE")
        axes[1].set_ylabel("mean PRSC")
        for ax in axes:
            ax.set_xlabel("epoch")
        axes[0].legend(frameon=False, fontsize=6)
        return _save(fig, path)
