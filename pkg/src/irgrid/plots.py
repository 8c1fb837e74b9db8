"""Figure rendering for reports.

All helpers draw straight to files with the Agg backend, so they work
headless.  Maps are drawn with origin at the lower left to match die
coordinates (y up).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DEFAULT_CMAP = "inferno"
DPI = 150


def save_heatmap(grid: np.ndarray, path, title: str | None = None,
                 units: str | None = None, cmap: str = DEFAULT_CMAP):
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(np.asarray(grid), origin="lower", cmap=cmap,
                   interpolation="nearest")
    cbar = fig.colorbar(im, ax=ax)
    if units:
        cbar.set_label(units)
    if title:
        ax.set_title(title)
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_pixel_overlay(grid: np.ndarray, pixels, path,
                       title: str | None = None, units: str | None = None,
                       marker_label: str | None = None,
                       cmap: str = DEFAULT_CMAP):
    """Heatmap with (row, col) pixels marked on top."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(np.asarray(grid), origin="lower", cmap=cmap,
                   interpolation="nearest")
    cbar = fig.colorbar(im, ax=ax)
    if units:
        cbar.set_label(units)
    pixels = list(pixels)
    if pixels:
        rows = [p[0] for p in pixels]
        cols = [p[1] for p in pixels]
        ax.scatter(cols, rows, s=8, marker="s", facecolors="none",
                   edgecolors="cyan", linewidths=0.7,
                   label=marker_label)
        if marker_label:
            ax.legend(loc="upper right", fontsize=7)
    if title:
        ax.set_title(title)
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_history_curves(rows, path):
    """Loss and learning-rate curves from training history rows."""
    epochs = [r.epoch for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax1.plot(epochs, [r.loss for r in rows])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_title("training loss")
    ax2.plot(epochs, [r.lr for r in rows])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("learning rate")
    ax2.set_title("schedule")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
