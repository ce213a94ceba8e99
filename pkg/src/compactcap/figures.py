"""Matplotlib figure rendering for the CLI report paths.

Every figure goes straight to a file (Agg backend, no display).  The report
commands write these next to their CSV output so a run leaves both the
numbers and the pictures behind.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import clip_for_plot  # noqa: E402


def save_size_chart(names, totals_millions, path: str) -> None:
    """Horizontal bar chart of model totals in millions of parameters."""
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(names) + 1.2))
    ypos = np.arange(len(names))
    ax.barh(ypos, totals_millions, color="#4878d0")
    ax.set_yticks(ypos, names)
    ax.invert_yaxis()
    ax.set_xlabel("parameters (M)")
    for y, v in zip(ypos, totals_millions):
        ax.text(v, y, f" {v:.1f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_distance_heatmap(matrix: np.ndarray, path: str, title: str) -> None:
    """Layer-distance heatmap; color floor clipped at the second-lowest value
    so the zero diagonal does not flatten the scale."""
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    vmin = clip_for_plot(matrix)
    im = ax.imshow(np.maximum(matrix, vmin), cmap="viridis", vmin=vmin)
    n = matrix.shape[0]
    ticks = np.arange(n)
    ax.set_xticks(ticks, [str(i + 1) for i in ticks])
    ax.set_yticks(ticks, [str(i + 1) for i in ticks])
    ax.set_xlabel("layer")
    ax.set_ylabel("layer")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_curves(history, path: str) -> None:
    """Loss and validation exact-match across training steps."""
    steps = [row["step"] for row in history]
    fig, ax1 = plt.subplots(figsize=(6, 3.6))
    ax1.plot(steps, [row["loss"] for row in history], color="#d65f5f", label="loss")
    ax1.set_xlabel("step")
    ax1.set_ylabel("training loss", color="#d65f5f")
    ax2 = ax1.twinx()
    ax2.plot(steps, [row["exact_match"] for row in history],
             color="#4878d0", label="val exact match")
    ax2.set_ylabel("validation exact match", color="#4878d0")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
