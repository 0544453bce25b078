"""Matplotlib rendering for the report paths.

Every command that writes a delimited report also drops a PNG next to it:
training curves beside the metrics log, recall bars beside the recall
report, a variant comparison beside the ablation table, and heatmaps beside
exported attention maps.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_training_curves",
    "save_recall_bars",
    "save_ablation_chart",
    "save_attention_heatmap",
]

_PNG_META = {"Software": None}    # keep identical runs byte-comparable

_LOSS_KEYS = ("loss_late", "loss_attention", "loss_res", "loss_pi", "loss_total")


def _save(fig, path: Path) -> None:
    fig.savefig(Path(path), dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_training_curves(records: list[dict], path: Path) -> None:
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_r1) = plt.subplots(1, 2, figsize=(9, 3.2), constrained_layout=True)
    for key in _LOSS_KEYS:
        ax_loss.plot(epochs, [r[key] for r in records], label=key.replace("loss_", ""))
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=7)
    ax_r1.plot(epochs, [r["val_recall_at_1"] for r in records], color="tab:green")
    ax_r1.set_xlabel("epoch")
    ax_r1.set_ylabel("validation R@1")
    ax_r1.set_ylim(0, 1.02)
    _save(fig, path)


def save_recall_bars(report, path: Path) -> None:
    labels = [f"R@{k}" for k in report.recall_at]
    labels += [f"Rs@{k}" for k in report.subset_recall_at]
    labels.append("avg")
    values = list(report.recall_at.values())
    values += list(report.subset_recall_at.values())
    values.append(report.avg)
    fig, ax = plt.subplots(figsize=(6.4, 3.0), constrained_layout=True)
    ax.bar(range(len(values)), values, color="tab:blue")
    ax.set_xticks(range(len(values)), labels, rotation=30, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    _save(fig, path)


def save_ablation_chart(variants: list[str], mean_r1: list[float], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.2), constrained_layout=True)
    ypos = range(len(variants))
    ax.barh(ypos, mean_r1, color="tab:purple")
    ax.set_yticks(ypos, variants, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean validation R@1")
    ax.set_xlim(0, 1.0)
    _save(fig, path)


def save_attention_heatmap(amap: np.ndarray, tokens: list[str], path: Path) -> None:
    """Region-by-token map with per-token spatial grids alongside."""
    r, t = amap.shape
    side = int(round(np.sqrt(r)))
    fig, axes = plt.subplots(1, t + 1, figsize=(2.2 * (t + 1), 2.6),
                             constrained_layout=True)
    im = axes[0].imshow(amap, aspect="auto", cmap="viridis")
    axes[0].set_xlabel("token")
    axes[0].set_ylabel("region")
    axes[0].set_xticks(range(t), tokens, rotation=45, fontsize=6)
    fig.colorbar(im, ax=axes[0], fraction=0.05)
    col = amap / np.maximum(amap.sum(axis=0, keepdims=True), 1e-30)
    for j in range(t):
        grid = col[:, j].reshape(side, side) if side * side == r else col[:, j][None, :]
        axes[j + 1].imshow(grid, cmap="magma")
        axes[j + 1].set_title(tokens[j], fontsize=7)
        axes[j + 1].set_xticks([])
        axes[j + 1].set_yticks([])
    _save(fig, path)
