"""Matplotlib rendering for the report path.

Figures are written next to the delimited outputs with pinned metadata so
two identical runs produce byte-identical files. The beeswarm-style
summary stays a CSV export (see shapley.export_summary); here we render
the interaction heatmap and the top-k importance ranking.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fm import InteractionMatrix
from .shapley import GlobalImportance

_SAVE_KWARGS = {"dpi": 150, "metadata": {"Software": None}}


def render_heatmap(interactions: InteractionMatrix, path: str | Path) -> None:
    """Diverging heatmap of pairwise latent interactions, zero-centered."""
    M = interactions.matrix
    limit = float(np.max(np.abs(M))) or 1.0
    d = len(interactions.feature_ids)
    side = max(4.0, 0.3 * d + 2.0)
    fig, ax = plt.subplots(figsize=(side, side * 0.85))
    image = ax.imshow(M, cmap="RdBu_r", vmin=-limit, vmax=limit)
    ax.set_xticks(range(d), interactions.feature_ids, rotation=90, fontsize=7)
    ax.set_yticks(range(d), interactions.feature_ids, fontsize=7)
    ax.set_title("Pairwise provision effects on log flow")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_importance(importance: GlobalImportance, k: int, path: str | Path) -> None:
    """Horizontal bars of the k largest mean absolute attributions."""
    k = min(k, len(importance.feature_ids))
    names = importance.feature_ids[:k][::-1]
    values = importance.values[:k][::-1]
    fig, ax = plt.subplots(figsize=(6.0, max(2.5, 0.3 * k + 1.0)))
    ax.barh(range(k), values, color="#3465a4")
    ax.set_yticks(range(k), names, fontsize=8)
    ax.set_xlabel("mean |attribution|")
    ax.set_title(f"Top {k} provisions")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
