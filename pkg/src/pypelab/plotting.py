"""Optional matplotlib figures written next to the CSV/PGM outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_heatmaps", "plot_metrics", "plot_schedule", "plot_grid"]

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    # dropping the Software tag keeps PNG bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_heatmaps(maps: Sequence[np.ndarray], path, title: str = "visual-to-instruction attention") -> Path:
    """One panel per layer, shared color scale."""
    with plt.rc_context(STYLE):
        n = len(maps)
        cols = min(n, 4)
        rows = -(-n // cols)
        fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
        vmax = max(float(np.max(m)) for m in maps) or 1.0
        for idx, ax in enumerate(axes.flat):
            if idx >= n:
                ax.axis("off")
                continue
            im = ax.imshow(maps[idx], cmap="viridis", vmin=0.0, vmax=vmax, interpolation="nearest")
            ax.set_title(f"layer {idx + 1}")
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=axes.ravel().tolist(), shrink=0.8)
        fig.suptitle(title)
        return _save(fig, path)


def plot_metrics(metrics, path) -> Path:
    layers = [m.layer for m in metrics]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(8, 2.4))
        for ax, attr, label in zip(
            axes, ("topk_mass", "entropy", "anchor_count"), ("top-k mass", "entropy (nats)", "anchors")
        ):
            ax.plot(layers, [getattr(m, attr) for m in metrics], marker="o", lw=1)
            ax.set_xlabel("layer")
            ax.set_ylabel(label)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def plot_schedule(schedule, path) -> Path:
    layers = np.arange(1, schedule.num_layers + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.4))
        ax.step(layers, schedule.per_layer_p_max, where="mid", lw=1.2)
        ax.set_xlabel("layer")
        ax.set_ylabel("P_max")
        ax.set_title(f"descent interval {schedule.descent_interval}")
        ax.grid(alpha=0.3)
        return _save(fig, path)


def plot_grid(grid, path) -> Path:
    idx = grid.indices
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.35 * idx.shape[1] + 1, 0.35 * idx.shape[0] + 0.6))
        ax.imshow(idx, cmap="magma", interpolation="nearest")
        if idx.size <= 400:
            for (i, j), v in np.ndenumerate(idx):
                ax.text(j, i, str(v), ha="center", va="center", fontsize=6, color="w")
        ax.set_xticks([])
        ax.set_yticks([])
        return _save(fig, path)
