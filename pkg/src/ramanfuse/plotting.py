"""Figures written next to the delimited outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps saved PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def roc_figure(curves: Mapping[str, tuple[np.ndarray, float | None]], path: str | Path, title: str = "") -> Path:
    """``curves`` maps a label to (roc points, auc)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], color="0.7", lw=1, ls="--")
    for name, (pts, auc) in curves.items():
        if pts is None:
            continue
        label = name if auc is None else f"{name} (AUC {auc:.3f})"
        ax.plot(pts[:, 0], pts[:, 1], lw=1.5, label=label)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def attribution_figure(scores: Sequence[tuple[str, float]], path: str | Path, title: str = "") -> Path:
    """Horizontal bars for ranked (feature, score) pairs, largest at the top."""
    names = [n for n, _ in scores][::-1]
    vals = np.array([v for _, v in scores][::-1], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 0.3 * max(len(names), 3) + 1))
    ax.barh(names, vals, color=np.where(vals >= 0, "tab:red", "tab:blue"))
    ax.axvline(0, color="0.3", lw=0.8)
    ax.set_xlabel("attribution")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def mean_spectra_figure(grid: np.ndarray, means: Mapping[str, np.ndarray], path: str | Path,
                        stds: Mapping[str, np.ndarray] | None = None, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for name, mu in means.items():
        ax.plot(grid, mu, lw=1, label=name)
        if stds and name in stds:
            ax.fill_between(grid, mu - stds[name], mu + stds[name], alpha=0.15)
    ax.set_xlabel("Raman shift (cm-1)")
    ax.set_ylabel("normalized intensity")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
