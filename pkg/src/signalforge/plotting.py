"""Figure rendering for the report paths. PNGs are written next to the
CSV/JSON outputs; the delimited files stay the source of truth for tests."""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def save_line(path: str, x: Sequence[float], ys: dict, xlabel: str, ylabel: str,
              title: str, logx: bool = False, logy: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for label, y in ys.items():
        ax.plot(x, y, label=label, linewidth=1.5)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_heatmap(path: str, matrix: np.ndarray, labels: Sequence[str],
                 title: str) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    masked = np.ma.masked_invalid(matrix)
    im = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap="RdYlGn")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    for i in range(len(labels)):
        for j in range(len(labels)):
            v = matrix[i, j]
            if not (isinstance(v, float) and math.isnan(v)):
                ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bars(path: str, labels: Sequence[str], values: Sequence[float],
              ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
