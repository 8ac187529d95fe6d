"""Matplotlib figures written next to the CSV metrics logs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical bytes
_PNG_METADATA = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_training_curve(records: list, key: str, path, title: str = "") -> Path:
    """Per-step ``key`` with its per-epoch mean overlaid."""
    steps = np.array([r["step"] for r in records])
    values = np.array([r[key] for r in records])
    epochs = np.array([r["epoch"] for r in records])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        ax.plot(steps, values, color="0.6", label="step")
        for e in np.unique(epochs):
            sel = epochs == e
            ax.hlines(values[sel].mean(), steps[sel].min(), steps[sel].max(), color="k",
                      label="epoch mean" if e == epochs.min() else None)
        ax.set_xlabel("step")
        ax.set_ylabel(key.replace("_", " "))
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_image_grid(grid: np.ndarray, path, title: str = "") -> Path:
    """Render a uint8 ``[H, W, C]`` grid (as from ``dataio.image_grid``)."""
    with plt.rc_context(STYLE):
        h, w = grid.shape[:2]
        fig, ax = plt.subplots(figsize=(max(w / 60.0, 2.0), max(h / 60.0, 1.0)))
        if grid.shape[2] == 1:
            ax.imshow(grid[..., 0], cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        else:
            ax.imshow(grid, interpolation="nearest")
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
