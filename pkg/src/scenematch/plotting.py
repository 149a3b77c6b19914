"""Figures written next to the tab-separated reports.

Uses bare ``Figure`` objects with the Agg canvas so nothing touches the
global pyplot state or needs a display.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .alignment import RetrievalReport

FIG_WIDTH = 6.4
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _new_figure(nrows: int = 1, width: float = FIG_WIDTH, height: float | None = None):
    fig = Figure(figsize=(width, height or width * GOLDEN * nrows / 1.3))
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(nrows, 1, k + 1) for k in range(nrows)]
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_training_curves(logs: Sequence, path) -> Path:
    """Fusion ratio per modality and validation rSum per epoch, loss below."""
    epochs = [e.epoch for e in logs]
    fig, (ax, ax_loss) = _new_figure(2)
    ax.plot(epochs, [e.ratio_image for e in logs], color="tab:blue", label="image ratio")
    ax.plot(epochs, [e.ratio_text for e in logs], color="tab:blue", ls="--", label="text ratio")
    ax.set_ylabel(r"$e^{\alpha}/(e^{\alpha}+e^{\beta})$", color="tab:blue")
    ax.ticklabel_format(axis="y", useOffset=False)
    twin = ax.twinx()
    twin.plot(epochs, [e.val_rsum for e in logs], color="tab:red", label="val rSum")
    twin.set_ylabel("validation rSum", color="tab:red")
    ax.legend(loc="lower left", fontsize=8)
    ax_loss.plot(epochs, [e.mean_loss for e in logs], color="k")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean loss")
    return _save(fig, path)


def plot_delta_sweep(rows: Sequence[tuple[float, RetrievalReport]], path) -> Path:
    deltas = [d for d, _ in rows]
    fig, (ax,) = _new_figure(1)
    ax.plot(deltas, [r.image_to_text[1] for _, r in rows], "o-", label="I2T R@1")
    ax.plot(deltas, [r.text_to_image[1] for _, r in rows], "s-", label="T2I R@1")
    ax.set_xlabel(r"$\delta$")
    ax.set_ylabel("recall (%)")
    twin = ax.twinx()
    twin.plot(deltas, [r.rsum for _, r in rows], "k^:", label="rSum")
    twin.set_ylabel("rSum")
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_region_word(A: np.ndarray, path, pairs: Sequence[tuple[int, int, float]] = ()) -> Path:
    """Heat map of the region-word affinity with the listed pairs boxed."""
    fig, (ax,) = _new_figure(1, height=FIG_WIDTH * 0.7)
    im = ax.imshow(A, cmap="viridis", aspect="auto")
    fig.colorbar(im, ax=ax, label="affinity")
    for rank, (i, j, _) in enumerate(pairs):
        ax.add_patch(_box(j, i, "red" if rank == 0 else "white"))
    ax.set_xlabel("word")
    ax.set_ylabel("region")
    return _save(fig, path)


def _box(x, y, color):
    from matplotlib.patches import Rectangle

    return Rectangle((x - 0.5, y - 0.5), 1, 1, fill=False, lw=2, edgecolor=color)
