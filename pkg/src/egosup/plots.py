"""Report figures.

Everything is drawn on a bare ``Figure`` with an Agg canvas, so nothing
touches pyplot's global state and the PNG bytes depend only on the data
(the ``Software`` tag is dropped to keep them stable across versions).
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

PNG_METADATA = {"Software": None}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=PNG_METADATA)


def ablation_chart(rows, path):
    """Grouped bars of pseudo-label (and, when present, trained) accuracy per variant."""
    labels = [r.variant for r in rows]
    pseudo = [r.pseudo_gt.accuracy for r in rows]
    trained = [r.trained.accuracy if r.trained is not None else np.nan for r in rows]
    x = np.arange(len(rows))
    fig = Figure(figsize=(5.0, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    has_trained = not np.all(np.isnan(trained))
    width = 0.38 if has_trained else 0.6
    ax.bar(x - (width / 2 if has_trained else 0), pseudo, width, label="pseudo GT", color="0.55")
    if has_trained:
        ax.bar(x + width / 2, trained, width, label="trained", color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    _save(fig, path)


def loss_curve(losses, path, smooth=25):
    losses = np.asarray(losses, dtype=np.float64)
    fig = Figure(figsize=(5.0, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    it = np.arange(len(losses))
    ax.plot(it, losses, color="0.75", lw=0.6, label="batch")
    if len(losses) >= smooth > 1:
        kernel = np.ones(smooth) / smooth
        ax.plot(it[smooth - 1:], np.convolve(losses, kernel, mode="valid"), color="tab:red",
                lw=1.2, label=f"mean of {smooth}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def heatmap_panels(frame, maps, titles, path, box=None):
    """Side-by-side panels: the frame image followed by each map.

    ``box`` (the annotated cooperator) is outlined on every panel.
    """
    n = len(maps) + 1
    fig = Figure(figsize=(2.6 * n, 2.3))
    panels = [frame.image if frame.image is not None else np.zeros(frame.dims.shape)] + list(maps)
    for i, (m, title) in enumerate(zip(panels, ["image"] + list(titles))):
        ax = fig.add_subplot(1, n, i + 1)
        if i == 0:
            ax.imshow(m, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        else:
            ax.imshow(m, cmap="magma", vmin=0.0, vmax=1.0, interpolation="nearest")
        if box is not None:
            ax.add_patch(Rectangle((box.x - 0.5, box.y - 0.5), box.w, box.h, fill=False,
                                   ec="tab:cyan", lw=0.8))
        ax.set_title(title, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)
