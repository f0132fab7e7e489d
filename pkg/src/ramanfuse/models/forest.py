"""Spectra-only random forest baseline with per-sex sub-models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from ..errors import TrainingError

# sub-model name -> sex filter
SUBMODELS = {"Both": None, "Men": "M", "Women": "F"}


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_depth: int | None = None
    max_features: str | float | int = "sqrt"
    min_samples_leaf: int = 2
    seed: int = 0


class ForestModel:
    """Bagged Gini trees, each fit on a bootstrap of the training rows.

    Trees are held as flat node arrays so a model reloaded from disk
    predicts identically to the freshly fitted one.
    """

    TREE_FIELDS = ("left", "right", "feature", "threshold", "positive")

    def __init__(self, config: ForestConfig, trees: list[dict[str, np.ndarray]], n_features: int):
        self.config = config
        self.trees = trees
        self.n_features = int(n_features)

    @classmethod
    def from_estimator(cls, config: ForestConfig, est: RandomForestClassifier) -> "ForestModel":
        pos = list(est.classes_).index(1)
        trees = []
        for t in est.estimators_:
            tr = t.tree_
            value = tr.value[:, 0, :]
            trees.append({
                "left": tr.children_left.astype(np.int64),
                "right": tr.children_right.astype(np.int64),
                "feature": tr.feature.astype(np.int64),
                "threshold": tr.threshold.astype(np.float64),
                "positive": value[:, pos] / value.sum(axis=1),
            })
        return cls(config, trees, est.n_features_in_)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        # split comparisons happen in single precision, as at fit time
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        rows = np.arange(x.shape[0])
        total = np.zeros(x.shape[0])
        for t in self.trees:
            node = np.zeros(x.shape[0], dtype=np.int64)
            while True:
                inner = t["left"][node] >= 0
                if not inner.any():
                    break
                f = np.where(inner, t["feature"][node], 0)
                go_left = x[rows, f] <= t["threshold"][node]
                node = np.where(inner, np.where(go_left, t["left"][node], t["right"][node]), node)
            total += t["positive"][node]
        return total / len(self.trees)

    def predict(self, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(x) >= threshold).astype(int)


def train_forest(x_s: np.ndarray, y, train_idx=None, config: ForestConfig | None = None) -> ForestModel:
    """Fit the forest on spectral columns of the training rows only."""
    config = config or ForestConfig()
    y = np.asarray(y).astype(int)
    idx = np.arange(y.size) if train_idx is None else np.asarray(train_idx, dtype=int)
    if np.unique(y[idx]).size < 2:
        raise TrainingError("random forest training split contains a single class")
    est = RandomForestClassifier(
        n_estimators=config.n_trees, criterion="gini", max_depth=config.max_depth,
        max_features=config.max_features, min_samples_leaf=config.min_samples_leaf,
        bootstrap=True, random_state=config.seed, n_jobs=1,
    )
    est.fit(np.asarray(x_s, dtype=np.float64)[idx], y[idx])
    return ForestModel.from_estimator(config, est)
