"""Matplotlib rendering for sweep results and reconstructions.

Figures are always written to files (Agg backend); the CSV stays the
machine-readable artifact and the PNG sits next to it for quick reading.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import SweepResult


def render_sweep(result: SweepResult, path: str | Path, title: str = "") -> None:
    """Runtime (red, left axis) and success rate (blue, right axis)."""
    params = [r[0] for r in result.rows]
    runtime = [r[1] for r in result.rows]
    rate = [r[2] for r in result.rows]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(params, runtime, "o-", color="tab:red", label="running time")
    ax1.set_xlabel(result.param_name)
    ax1.set_ylabel("mean running time (ms)", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    if max(runtime) > 0 and min(runtime) > 0 and max(runtime) / min(runtime) > 50:
        ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(params, rate, "s--", color="tab:blue", label="success rate")
    ax2.set_ylabel("success rate", color="tab:blue")
    ax2.set_ylim(-0.05, 1.05)
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_reconstruction(
    true_x: np.ndarray, recovered_x: np.ndarray | None, path: str | Path, title: str = ""
) -> None:
    """Original samples (top row) against recovered ones (bottom row).

    Samples whose dimension is a perfect square are drawn as images,
    anything else as per-sample bar profiles.
    """
    b, u = true_x.shape
    side = int(math.isqrt(u))
    as_image = side * side == u and side >= 2
    cols = min(b, 10)
    fig, axes = plt.subplots(2, cols, figsize=(1.2 * cols, 2.8), squeeze=False)
    for j in range(cols):
        _draw(axes[0][j], true_x[j], as_image, side)
        if recovered_x is not None and j < recovered_x.shape[0]:
            _draw(axes[1][j], recovered_x[j], as_image, side)
        else:
            axes[1][j].axis("off")
    axes[0][0].set_ylabel("original", fontsize=8)
    axes[1][0].set_ylabel("recovered", fontsize=8)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _draw(ax, sample: np.ndarray, as_image: bool, side: int) -> None:
    if as_image:
        ax.imshow(sample.reshape(side, side), cmap="gray", interpolation="nearest")
    else:
        ax.bar(range(len(sample)), sample, width=1.0)
    ax.set_xticks([])
    ax.set_yticks([])
