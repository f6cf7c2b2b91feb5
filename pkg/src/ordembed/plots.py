"""Matplotlib renderers for the command-line report paths.

Every function writes one PNG next to the delimited artifact it
illustrates and returns the path it wrote.  The Agg backend is forced
so rendering works headless; figures are closed after saving so batch
runs do not accumulate state.
"""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .density import DensityGrid

# keep PNG bytes reproducible across runs of the same inputs
_METADATA = {"Software": "ordembed"}


def _save(fig, path: str | os.PathLike) -> str:
    fig.savefig(path, dpi=120, metadata=_METADATA)
    plt.close(fig)
    return os.fspath(path)


def scatter_plot(points: np.ndarray, path: str | os.PathLike,
                 title: str = "") -> str:
    """Scatter of the first two coordinates, third coordinate as color."""
    pts = np.asarray(points, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    if pts.shape[1] > 2:
        sc = ax.scatter(pts[:, 0], pts[:, 1], s=6.0, c=pts[:, 2],
                        cmap="viridis")
        fig.colorbar(sc, ax=ax, label="x3")
    else:
        ax.scatter(pts[:, 0], pts[:, 1], s=6.0)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def overlay_plot(reference: np.ndarray, aligned: np.ndarray,
                 path: str | os.PathLike, title: str = "") -> str:
    """Truth and aligned estimate on shared axes, residuals as segments."""
    ref = np.asarray(reference, dtype=float)
    est = np.asarray(aligned, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for a, b in zip(ref, est):
        ax.plot([a[0], b[0]], [a[1], b[1]], color="0.8", lw=0.5, zorder=1)
    ax.scatter(ref[:, 0], ref[:, 1], s=8.0, label="truth", zorder=2)
    ax.scatter(est[:, 0], est[:, 1], s=8.0, marker="x", label="estimate",
               zorder=3)
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def density_heatmap(grid: DensityGrid, path: str | os.PathLike,
                    title: str = "") -> str:
    """Density cells as an image in data coordinates."""
    xmin, xmax, ymin, ymax = grid.box
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    # u[i, j] holds x-bin i, y-bin j: transpose so x runs horizontally
    im = ax.imshow(grid.u.T, origin="lower", extent=(xmin, xmax, ymin, ymax),
                   cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax, label="density")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def pareto_plot(rows: Sequence[tuple[str, float, float]],
                path: str | os.PathLike, title: str = "") -> str:
    """Error versus wall time, one series per method label."""
    fig, ax = plt.subplots(figsize=(5.6, 4.4))
    by_method: dict[str, list[tuple[float, float]]] = {}
    for label, seconds, err in rows:
        by_method.setdefault(label, []).append((seconds, err))
    for label in sorted(by_method):
        pts = np.asarray(sorted(by_method[label]), dtype=float)
        ax.plot(pts[:, 0], pts[:, 1], marker="o", ms=4.0, label=label)
    ax.set_xlabel("wall time (s)")
    ax.set_ylabel("A-error")
    if len(by_method) > 1 or any(len(v) > 1 for v in by_method.values()):
        ax.legend(loc="best", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
