"""TDDP: boosted uplift trees fit directly on the treatment effect.

Each round grows a tree with the delta-delta-p criterion on the current
working labels, then subtracts that tree's (shrunk) uplift from the
treated rows' labels. After ``m`` rounds a treated row carries
``y - u_m(x)``, control rows keep their original outcome.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from utb._rng import stream
from utb.booster import BoosterModel
from utb.dataset import ConfigError, UpliftDataset, bin_features
from utb.trees import GrowthConfig, SplitCriterion, UpliftTree, grow_tree, resolve_threads

ENSEMBLE_MODES = ("boosting", "bagging")


@dataclass(frozen=True)
class TddpConfig:
    num_trees: int = 100
    shrinkage: float = 0.1
    growth: GrowthConfig = field(default_factory=GrowthConfig)
    ensemble_mode: str = "boosting"
    seed: int = 0
    max_bins: int = 255

    def __post_init__(self):
        if self.num_trees < 1:
            raise ConfigError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise ConfigError(f"ensemble_mode must be one of {ENSEMBLE_MODES}, got {self.ensemble_mode!r}")


@dataclass(frozen=True)
class TddpNodeStats:
    n1: int
    n0: int
    sum_y1: float
    sum_y0: float

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @classmethod
    def from_rows(cls, y, w) -> TddpNodeStats:
        y, w = np.asarray(y, dtype=np.float64), np.asarray(w)
        return cls(int((w == 1).sum()), int((w == 0).sum()), float(y[w == 1].sum()), float(y[w == 0].sum()))


def _uplift(n1, n0, sum_y1, sum_y0):
    return sum_y1 / n1 - sum_y0 / n0


def _ddp(n1_l, n0_l, sy1_l, sy0_l, n1_r, n0_r, sy1_r, sy0_r):
    n_l = n1_l + n0_l
    n_r = n1_r + n0_r
    diff = _uplift(n1_l, n0_l, sy1_l, sy0_l) - _uplift(n1_r, n0_r, sy1_r, sy0_r)
    return n_l * n_r / (n_l + n_r) * diff * diff


def ddp_gain(left: TddpNodeStats, right: TddpNodeStats) -> float:
    """Weighted squared gap between the children's treated-minus-control means."""
    return float(_ddp(left.n1, left.n0, left.sum_y1, left.sum_y0, right.n1, right.n0, right.sum_y1, right.sum_y0))


def tddp_leaf_weight(stats: TddpNodeStats, shrinkage: float) -> float:
    return shrinkage * float(_uplift(stats.n1, stats.n0, stats.sum_y1, stats.sum_y0))


class TddpCriterion(SplitCriterion):
    """Row statistics ``[1, y, w, w*y]`` for a binary treatment ``w``."""

    n_stats = 4
    n_arms = 2

    @staticmethod
    def row_stats(y, w) -> np.ndarray:
        w = w.astype(np.float64)
        return np.column_stack([np.ones_like(y), y, w, w * y])

    @staticmethod
    def _parts(s):
        n1 = s[2]
        sy1 = s[3]
        return n1, s[0] - n1, sy1, s[1] - sy1

    def arm_counts(self, stats):
        n1, n0, _, _ = self._parts(stats)
        return [n0, n1]

    def gain(self, left, right, parent):
        return _ddp(*self._parts(left), *self._parts(right))

    def leaf_value(self, stats):
        n1, n0, sy1, sy0 = self._parts(stats)
        if n1 == 0 or n0 == 0:
            return np.array([0.0])
        return np.array([_uplift(n1, n0, sy1, sy0)])


def transform_labels(working_y, tree: UpliftTree, X, treatment) -> np.ndarray:
    """Subtract the tree's uplift from the treated rows; ``X`` is raw (n, p)."""
    delta = tree.predict_values(X)[:, 0]
    return working_y - np.where(np.asarray(treatment) == 1, delta, 0.0)


def fit_tddp(
    data: UpliftDataset,
    cfg: TddpConfig,
    threads: Optional[int] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> BoosterModel:
    """Fit a TDDP ensemble.

    ``callback(m, value)`` receives the variance of the treated rows'
    working labels after each boosting round.
    """
    data.validate()
    if data.K != 1:
        raise ConfigError(f"tddp supports binary treatment; data has {data.K} treatment arms")
    threads = resolve_threads(threads)
    binned = bin_features(data, cfg.max_bins)
    y = data.outcome
    w = data.treatment
    crit = TddpCriterion()
    all_rows = np.arange(data.n)
    trees = []
    if cfg.ensemble_mode == "boosting":
        working = y.copy()
        for m in range(cfg.num_trees):
            tree = grow_tree(binned, all_rows, crit.row_stats(working, w), crit, cfg.growth, threads)
            tree = tree.scaled(cfg.shrinkage)
            delta = tree.leaf_values[tree.predict_leaf_binned(binned.bins), 0]
            working = working - np.where(w == 1, delta, 0.0)
            trees.append(tree)
            if callback is not None:
                callback(m, float(np.var(working[w == 1])))
    else:
        stats = crit.row_stats(y, w)
        for m in range(cfg.num_trees):
            rows = np.sort(stream(cfg.seed, "boot", m).integers(0, data.n, data.n))
            trees.append(grow_tree(binned, rows, stats, crit, cfg.growth, threads))
    return BoosterModel(
        kind="tddp",
        trees=trees,
        n_arms=2,
        shrinkage=cfg.shrinkage if cfg.ensemble_mode == "boosting" else 1.0,
        ensemble_mode=cfg.ensemble_mode,
        feature_names=data.feature_names,
        loss=None,
        config=asdict(cfg),
        seed=cfg.seed,
    )


def predict_tddp(model: BoosterModel, X) -> np.ndarray:
    """Estimated uplift per row: sum (boosting) or mean (bagging) of tree weights."""
    if model.kind != "tddp":
        raise ConfigError(f"expected a tddp model, got {model.kind!r}")
    return model.raw_sum(X)[:, 0]
