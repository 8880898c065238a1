"""Fitted ensemble shared by both boosters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from utb.dataset import ConfigError


class ShapeError(ValueError):
    """Prediction input whose width does not match the training features."""


@dataclass(frozen=True)
class BoosterModel:
    """Ordered trees plus the metadata needed to evaluate and re-save them.

    Leaf weights are stored with shrinkage already applied. ``boosting``
    ensembles sum their trees, ``bagging`` ensembles average them.
    """

    kind: str
    trees: tuple
    n_arms: int
    shrinkage: float
    ensemble_mode: str
    feature_names: list
    loss: Optional[str] = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", list(self.feature_names))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def K(self) -> int:
        return self.n_arms - 1

    def truncated(self, n_trees: int) -> BoosterModel:
        """The model made of the first ``n_trees`` trees."""
        return replace(self, trees=self.trees[:n_trees])

    def check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, found {X.shape[-1]}")
        return X

    def raw_sum(self, X) -> np.ndarray:
        """Aggregated leaf values, shape (n, leaf width)."""
        if not self.trees:
            raise ConfigError("model has no trees")
        X = self.check_input(X)
        total = np.zeros((X.shape[0], self.trees[0].leaf_values.shape[1]))
        for tree in self.trees:
            total += tree.predict_values(X)
        if self.ensemble_mode == "bagging":
            total /= len(self.trees)
        return total

