"""CausalGBM: second-order boosting of a baseline outcome and per-arm effects.

Every tree carries two weight sets on one structure: ``v`` (the baseline
function f) and ``u_a`` for each treatment arm (the effect function tau).
A row in arm ``a`` receives ``v + u_a`` on the margin scale, control rows
receive ``v``. Within a leaf, ``v`` is the Newton step on the control rows
alone and each ``u_a`` is the Newton step on arm ``a`` with ``v`` held fixed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from utb._rng import stream
from utb.booster import BoosterModel
from utb.dataset import ConfigError, UpliftDataset, bin_features
from utb.tddp import ENSEMBLE_MODES
from utb.trees import GrowthConfig, SplitCriterion, grow_tree, resolve_threads

HESSIAN_FLOOR = 1e-16


class DegenerateLeafError(ArithmeticError):
    """A leaf whose hessian sum is zero with no L2 term to regularize it."""


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


@dataclass(frozen=True)
class Loss:
    kind: str = "squared"

    def __post_init__(self):
        if self.kind not in ("squared", "logistic"):
            raise ConfigError(f"loss must be squared or logistic, got {self.kind!r}")

    def value(self, y, margin) -> np.ndarray:
        y, margin = np.asarray(y, dtype=np.float64), np.asarray(margin, dtype=np.float64)
        if self.kind == "squared":
            return 0.5 * (y - margin) ** 2
        # log(1 + e^m) - y m, stable for large |m|
        return np.logaddexp(0.0, margin) - y * margin

    def grad_hess(self, y, margin) -> tuple[np.ndarray, np.ndarray]:
        y, margin = np.asarray(y, dtype=np.float64), np.asarray(margin, dtype=np.float64)
        if self.kind == "squared":
            return margin - y, np.ones_like(margin)
        prob = _sigmoid(margin)
        return prob - y, np.maximum(prob * (1.0 - prob), HESSIAN_FLOOR)

    def link_inverse(self, margin):
        return _sigmoid(margin) if self.kind == "logistic" else margin


@dataclass(frozen=True)
class CausalConfig:
    num_trees: int = 100
    shrinkage: float = 0.1
    loss: str = "squared"
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
        Loss(self.loss)


# --------------------------------------------------------------------------
# leaf algebra
#
# Aggregated statistics use the layout [count_0, G_0, H_0, count_1, G_1, H_1, ...]
# (one triple per arm) on the FIRST axis, so the same functions work on a
# single leaf and on whole candidate-split arrays.


def arm_stats(stats: np.ndarray, n_arms: int):
    """Split a statistics array into per-arm (count, G, H) lists."""
    return (
        [stats[3 * a] for a in range(n_arms)],
        [stats[3 * a + 1] for a in range(n_arms)],
        [stats[3 * a + 2] for a in range(n_arms)],
    )


def leaf_weights(stats: np.ndarray, n_arms: int, reg_lambda: float = 0.0):
    """Optimal ``v`` and ``[u_1..u_K]`` for aggregated leaf statistics."""
    _, G, H = arm_stats(np.asarray(stats, dtype=np.float64), n_arms)
    v = -G[0] / (H[0] + reg_lambda)
    u = [-(G[a] + v * H[a]) / (H[a] + reg_lambda) for a in range(1, n_arms)]
    return v, u


def leaf_loss(stats: np.ndarray, n_arms: int, reg_lambda: float = 0.0):
    """Second-order objective of a leaf evaluated at its optimal weights.

    ``G v + (H + lambda) v^2 / 2`` over all rows of the leaf, minus
    ``(G_a + v H_a)^2 / (2 (H_a + lambda))`` for every treatment arm.
    """
    _, G, H = arm_stats(np.asarray(stats, dtype=np.float64), n_arms)
    v = -G[0] / (H[0] + reg_lambda)
    g_all, h_all = G[0], H[0]
    for a in range(1, n_arms):
        g_all = g_all + G[a]
        h_all = h_all + H[a]
    loss = g_all * v + 0.5 * (h_all + reg_lambda) * v * v
    for a in range(1, n_arms):
        resid = G[a] + v * H[a]
        denom = 2.0 * (H[a] + reg_lambda)
        # an arm with no rows has zero sums and contributes nothing
        with np.errstate(invalid="ignore", divide="ignore"):
            loss = loss - np.where(denom > 0, resid * resid / denom, 0.0)
    return loss


def split_gain(parent, left, right, n_arms: int, reg_lambda: float = 0.0):
    """Loss reduction from replacing ``parent`` by ``left`` and ``right``."""
    return leaf_loss(parent, n_arms, reg_lambda) - (
        leaf_loss(left, n_arms, reg_lambda) + leaf_loss(right, n_arms, reg_lambda)
    )


class CausalCriterion(SplitCriterion):
    def __init__(self, n_arms: int, reg_lambda: float = 0.0):
        self.n_arms = n_arms
        self.n_stats = 3 * n_arms
        self.reg_lambda = reg_lambda

    def row_stats(self, g, h, treatment) -> np.ndarray:
        out = np.zeros((g.shape[0], self.n_stats))
        for a in range(self.n_arms):
            in_arm = treatment == a
            out[in_arm, 3 * a] = 1.0
            out[in_arm, 3 * a + 1] = g[in_arm]
            out[in_arm, 3 * a + 2] = h[in_arm]
        return out

    def arm_counts(self, stats):
        return [stats[3 * a] for a in range(self.n_arms)]

    def gain(self, left, right, parent):
        return split_gain(parent, left, right, self.n_arms, self.reg_lambda)

    def leaf_value(self, stats):
        counts = self.arm_counts(stats)
        _, _, H = arm_stats(stats, self.n_arms)
        if self.reg_lambda == 0.0 and any(c > 0 and h == 0 for c, h in zip(counts, H)):
            raise DegenerateLeafError("zero hessian sum in a non-empty arm")
        if counts[0] == 0:
            return np.zeros(self.n_arms)
        v, u = leaf_weights(stats, self.n_arms, self.reg_lambda)
        u = [ua if counts[a + 1] > 0 else 0.0 for a, ua in enumerate(u)]
        return np.array([v, *u], dtype=np.float64)


# --------------------------------------------------------------------------
# training


def fit_causalgbm(
    data: UpliftDataset,
    cfg: CausalConfig,
    threads: Optional[int] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> BoosterModel:
    """Fit a CausalGBM ensemble; any number of treatment arms.

    Margins start at 0. In boosting mode each iteration recomputes g and h
    at the current margins and adds ``shrinkage * (v + u_w)`` to every row.
    In bagging mode g and h stay at their initial values and each tree sees
    an independent bootstrap resample. ``callback(m, loss)`` receives the
    mean training loss after each boosting iteration.
    """
    data.validate()
    threads = resolve_threads(threads)
    loss = Loss(cfg.loss)
    binned = bin_features(data, cfg.max_bins)
    y, w = data.outcome, data.treatment
    n_arms = data.n_arms
    crit = CausalCriterion(n_arms, cfg.growth.reg_lambda)
    all_rows = np.arange(data.n)
    margin = np.zeros(data.n)
    trees = []
    if cfg.ensemble_mode == "boosting":
        for m in range(cfg.num_trees):
            g, h = loss.grad_hess(y, margin)
            tree = grow_tree(binned, all_rows, crit.row_stats(g, h, w), crit, cfg.growth, threads)
            tree = tree.scaled(cfg.shrinkage)
            vals = tree.leaf_values[tree.predict_leaf_binned(binned.bins)]
            margin = margin + _row_contribution(vals, w)
            trees.append(tree)
            if callback is not None:
                callback(m, float(loss.value(y, margin).mean()))
    else:
        g, h = loss.grad_hess(y, margin)
        stats = crit.row_stats(g, h, w)
        for m in range(cfg.num_trees):
            rows = np.sort(stream(cfg.seed, "boot", m).integers(0, data.n, data.n))
            trees.append(grow_tree(binned, rows, stats, crit, cfg.growth, threads))
    return BoosterModel(
        kind="causalgbm",
        trees=trees,
        n_arms=n_arms,
        shrinkage=cfg.shrinkage if cfg.ensemble_mode == "boosting" else 1.0,
        ensemble_mode=cfg.ensemble_mode,
        feature_names=data.feature_names,
        loss=cfg.loss,
        config=asdict(cfg),
        seed=cfg.seed,
    )


def _row_contribution(vals, w):
    """``v + u_w`` per row from leaf-value rows ``(v, u_1..u_K)``."""
    effect = np.where(w > 0, vals[np.arange(vals.shape[0]), np.maximum(w, 0)], 0.0)
    return vals[:, 0] + effect


def _check(model):
    if model.kind != "causalgbm":
        raise ConfigError(f"expected a causalgbm model, got {model.kind!r}")


def predict_effect(model: BoosterModel, X, scale: str = "margin") -> np.ndarray:
    """Per-arm effect estimates, shape (n, K).

    ``scale="margin"`` returns the summed ``u`` weights. ``"probability"``
    returns ``sigmoid(f + u_a) - sigmoid(f)`` for logistic models and equals
    the margin scale for squared loss.
    """
    _check(model)
    if scale not in ("margin", "probability"):
        raise ConfigError(f"scale must be margin or probability, got {scale!r}")
    raw = model.raw_sum(X)
    if scale == "margin" or model.loss == "squared":
        return raw[:, 1:]
    base = _sigmoid(raw[:, :1])
    return _sigmoid(raw[:, :1] + raw[:, 1:]) - base


def predict_outcome(model: BoosterModel, X, arm: int = 0, scale: str = "margin") -> np.ndarray:
    """Predicted potential outcome under ``arm`` (0 is control)."""
    _check(model)
    if not 0 <= arm < model.n_arms:
        raise ConfigError(f"unknown arm {arm}; model has arms 0..{model.n_arms - 1}")
    if scale not in ("margin", "probability"):
        raise ConfigError(f"scale must be margin or probability, got {scale!r}")
    raw = model.raw_sum(X)
    out = raw[:, 0] + (raw[:, arm] if arm > 0 else 0.0)
    if scale == "probability":
        return Loss(model.loss).link_inverse(out)
    return out
