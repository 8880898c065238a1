"""Histogram split finding, leaf-wise tree growth and prediction routing.

Both boosters share this module. A booster supplies a ``SplitCriterion``
that knows the layout of its per-row statistics and how to turn aggregated
statistics into split gains and leaf weights; everything else (histograms,
candidate enumeration, feasibility, growth order, routing) lives here.
"""

from __future__ import annotations

import heapq
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from utb.dataset import BinnedDataset, ConfigError


@dataclass(frozen=True)
class GrowthConfig:
    max_leaves: int = 31
    max_depth: Optional[int] = None
    min_samples_leaf: int = 20
    min_samples_per_arm_leaf: int = 5
    min_gain: float = 0.0
    # L2 penalty added to every hessian-sum denominator
    reg_lambda: float = 0.0

    def __post_init__(self):
        if self.max_leaves < 1:
            raise ConfigError(f"max_leaves must be >= 1, got {self.max_leaves}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_leaf < 1 or self.min_samples_per_arm_leaf < 1:
            raise ConfigError("min_samples_leaf and min_samples_per_arm_leaf must be >= 1")
        if self.min_gain < 0 or self.reg_lambda < 0:
            raise ConfigError("min_gain and reg_lambda must be >= 0")


class SplitCriterion:
    """Interface between the grower and a booster's statistics.

    Per-row statistics are a float matrix ``(n, n_stats)``; any aggregate of
    rows is the column sum. The methods below receive aggregates with the
    statistics axis FIRST, either a single vector ``(n_stats,)`` or a stack
    of candidate splits ``(n_stats, ...)``.
    """

    n_stats: int
    n_arms: int

    def arm_counts(self, stats: np.ndarray) -> list:
        """Row counts, one array per arm (control first)."""
        raise NotImplementedError

    def gain(self, left: np.ndarray, right: np.ndarray, parent: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def leaf_value(self, stats: np.ndarray) -> np.ndarray:
        raise NotImplementedError


# --------------------------------------------------------------------------
# histograms


@njit(nogil=True, cache=True)
def _accumulate(bins, rows, stats, f_lo, f_hi, out):
    n_stats = stats.shape[1]
    for f in range(f_lo, f_hi):
        col = bins[f]
        hist = out[f]
        for i in range(rows.shape[0]):
            r = rows[i]
            b = col[r]
            for s in range(n_stats):
                hist[b, s] += stats[r, s]


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("UTB_THREADS", 1)
    try:
        threads = int(threads)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {threads!r}") from None
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def build_histograms(rows, data: BinnedDataset, stats: np.ndarray, threads: int = 1) -> np.ndarray:
    """Per-(feature, bin) sums of ``stats`` over ``rows``.

    Returns an array of shape ``(p, total_bins, n_stats)``. Each feature is
    accumulated sequentially in row order, so the result does not depend on
    ``threads``; threads only split the feature range.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    stats = np.ascontiguousarray(stats, dtype=np.float64)
    p = data.p
    out = np.zeros((p, data.total_bins, stats.shape[1]), dtype=np.float64)
    if threads <= 1 or p < 2:
        _accumulate(data.bins, rows, stats, 0, p, out)
        return out
    edges = np.linspace(0, p, min(threads, p) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=len(edges) - 1) as pool:
        jobs = [
            pool.submit(_accumulate, data.bins, rows, stats, lo, hi, out)
            for lo, hi in zip(edges[:-1], edges[1:])
        ]
        for job in jobs:
            job.result()
    return out


# --------------------------------------------------------------------------
# tree


@dataclass(frozen=True)
class UpliftTree:
    """Array-encoded binary tree.

    Internal node ``k`` sends a row left when ``x[feature[k]] <= threshold[k]``
    (NaN follows ``nan_left[k]``); leaves have ``left[k] == -1`` and point into
    ``leaf_values`` through ``leaf_index[k]``. ``leaf_values`` has one row per
    leaf: a single uplift weight for TDDP, ``(v, u_1..u_K)`` for CausalGBM.
    """

    feature: np.ndarray
    threshold: np.ndarray
    threshold_bin: np.ndarray
    nan_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_index: np.ndarray
    leaf_values: np.ndarray
    # split gain of each internal node, 0 at leaves
    gain: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.gain is None:
            object.__setattr__(self, "gain", np.zeros(self.left.shape[0]))

    @property
    def num_leaves(self) -> int:
        return self.leaf_values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.left.shape[0]

    def scaled(self, factor: float) -> UpliftTree:
        return _replace(self, leaf_values=self.leaf_values * factor)

    def predict_leaf(self, X) -> np.ndarray:
        """Leaf index of every row of raw features ``X`` (n, p)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            nd = node[active]
            x = X[active, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.nan_left[nd], x <= self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.left[node[active]] >= 0]
        return self.leaf_index[node]

    def predict_leaf_binned(self, bins: np.ndarray, rows=None) -> np.ndarray:
        """Leaf index of rows given as bin indices, ``bins`` shaped (p, n)."""
        rows = np.arange(bins.shape[1]) if rows is None else np.asarray(rows)
        node = np.zeros(rows.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            nd = node[active]
            b = bins[self.feature[nd], rows[active]].astype(np.int64)
            go_left = np.where(b == 0, self.nan_left[nd], b <= self.threshold_bin[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.left[node[active]] >= 0]
        return self.leaf_index[node]

    def predict_values(self, X) -> np.ndarray:
        return self.leaf_values[self.predict_leaf(X)]


def _replace(tree, **changes):
    fields = {k: getattr(tree, k) for k in tree.__dataclass_fields__}
    fields.update(changes)
    return UpliftTree(**fields)


def single_leaf_tree(value) -> UpliftTree:
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return UpliftTree(
        feature=np.array([-1]),
        threshold=np.array([0.0]),
        threshold_bin=np.array([0]),
        nan_left=np.array([False]),
        left=np.array([-1]),
        right=np.array([-1]),
        leaf_index=np.array([0]),
        leaf_values=value[None, :],
    )


# --------------------------------------------------------------------------
# split search


@dataclass(frozen=True)
class SplitRule:
    feature: int
    threshold_bin: int
    nan_goes_left: bool
    gain: float


def find_best_split(hist, totals, data: BinnedDataset, criterion: SplitCriterion, cfg: GrowthConfig):
    """Best feasible split of one node from its histogram, or None.

    Candidates are every ``(feature, threshold_bin, nan_goes_left)`` with
    ``1 <= threshold_bin < number of value bins``. Ties go to the lower
    feature, then the lower threshold, then ``nan_goes_left=False``, which is
    exactly the first maximum of the ``(p, threshold, flag)`` gain array.
    """
    p, n_bins, n_stats = hist.shape
    if n_bins < 3:
        return None
    h = np.moveaxis(hist, 2, 0)  # (S, p, bins)
    cum = np.cumsum(h[:, :, 1:-1], axis=2)  # thresholds 1 .. n_bins-2
    nan_rows = any(c.any() for c in criterion.arm_counts(h[:, :, 0]))
    if nan_rows:
        left = np.stack([cum, cum + h[:, :, :1]], axis=3)  # (S, p, T, 2)
    else:
        left = cum[..., None]
    tot = totals.reshape((n_stats,) + (1,) * (left.ndim - 1))
    right = tot - left
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = criterion.gain(left, right, tot)
    n_value_bins = np.array([data.n_bins(f) - 1 for f in range(p)])
    thr = np.arange(1, n_bins - 1)
    valid = (thr[None, :] < n_value_bins[:, None])[:, :, None]
    lc = criterion.arm_counts(left)
    rc = criterion.arm_counts(right)
    valid = valid & (sum(lc) >= cfg.min_samples_leaf) & (sum(rc) >= cfg.min_samples_leaf)
    for c in lc + rc:
        valid &= c >= cfg.min_samples_per_arm_leaf
    valid &= np.isfinite(gain)
    gain = np.where(valid, gain, -np.inf)
    best = int(np.argmax(gain))
    g = gain.flat[best]
    if not g > cfg.min_gain:
        return None
    f, t, flag = np.unravel_index(best, gain.shape)
    return SplitRule(feature=int(f), threshold_bin=int(t) + 1, nan_goes_left=bool(flag), gain=float(g))


@dataclass
class _Leaf:
    node: int
    rows: np.ndarray
    hist: np.ndarray
    totals: np.ndarray
    depth: int
    split: Optional[SplitRule] = None


def grow_tree(
    data: BinnedDataset,
    rows,
    stats: np.ndarray,
    criterion: SplitCriterion,
    cfg: GrowthConfig,
    threads: int = 1,
) -> UpliftTree:
    """Grow one tree best-first on ``rows`` (duplicates allowed, as in a bootstrap).

    The frontier leaf whose best split has the largest gain is split next,
    ties going to the leaf created first. Growth stops at ``max_leaves`` or
    when no frontier leaf has a feasible split with gain above ``min_gain``.
    Leaf weights are ``criterion.leaf_value`` of each leaf's statistics.
    """
    rows = np.asarray(rows, dtype=np.int64)
    stats = np.ascontiguousarray(stats, dtype=np.float64)
    totals = stats[rows].sum(axis=0)
    feature, tbin, thresh, nan_left, left, right, gains = [-1], [0], [0.0], [False], [-1], [-1], [0.0]
    leaf_totals = {0: totals}

    root_ok = min(criterion.arm_counts(totals)) >= cfg.min_samples_per_arm_leaf
    if cfg.max_leaves == 1 or not root_ok or rows.size == 0:
        return single_leaf_tree(criterion.leaf_value(totals))

    def evaluate(leaf):
        if cfg.max_depth is not None and leaf.depth >= cfg.max_depth:
            return
        leaf.split = find_best_split(leaf.hist, leaf.totals, data, criterion, cfg)

    heap = []
    counter = 0
    root = _Leaf(0, rows, build_histograms(rows, data, stats, threads), totals, 0)
    evaluate(root)
    if root.split is not None:
        heapq.heappush(heap, (-root.split.gain, counter, root))
    n_leaves = 1
    while heap and n_leaves < cfg.max_leaves:
        _, _, leaf = heapq.heappop(heap)
        s = leaf.split
        b = data.bins[s.feature, leaf.rows]
        go_left = np.where(b == 0, s.nan_goes_left, b <= s.threshold_bin)
        l_rows, r_rows = leaf.rows[go_left], leaf.rows[~go_left]
        if l_rows.size <= r_rows.size:
            l_hist = build_histograms(l_rows, data, stats, threads)
            r_hist = leaf.hist - l_hist
        else:
            r_hist = build_histograms(r_rows, data, stats, threads)
            l_hist = leaf.hist - r_hist
        k = leaf.node
        feature[k], tbin[k], nan_left[k], gains[k] = s.feature, s.threshold_bin, s.nan_goes_left, s.gain
        thresh[k] = data.threshold_value(s.feature, s.threshold_bin)
        left[k], right[k] = len(left), len(left) + 1
        del leaf_totals[k]
        children = []
        for c_rows, c_hist in ((l_rows, l_hist), (r_rows, r_hist)):
            node = len(left)
            for arr, v in (
                (feature, -1), (tbin, 0), (thresh, 0.0), (nan_left, False), (left, -1), (right, -1), (gains, 0.0)
            ):
                arr.append(v)
            c_tot = stats[c_rows].sum(axis=0)
            leaf_totals[node] = c_tot
            children.append(_Leaf(node, c_rows, c_hist, c_tot, leaf.depth + 1))
        n_leaves += 1
        for child in children:
            counter += 1
            evaluate(child)
            if child.split is not None:
                heapq.heappush(heap, (-child.split.gain, counter, child))

    left_arr = np.array(left, dtype=np.int64)
    leaf_index = np.full(left_arr.shape[0], -1, dtype=np.int64)
    leaf_nodes = np.flatnonzero(left_arr < 0)
    leaf_index[leaf_nodes] = np.arange(leaf_nodes.size)
    values = np.array([np.atleast_1d(criterion.leaf_value(leaf_totals[k])) for k in leaf_nodes])
    return UpliftTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(thresh, dtype=np.float64),
        threshold_bin=np.array(tbin, dtype=np.int64),
        nan_left=np.array(nan_left, dtype=bool),
        left=left_arr,
        right=np.array(right, dtype=np.int64),
        leaf_index=leaf_index,
        leaf_values=values.astype(np.float64),
        gain=np.array(gains, dtype=np.float64),
    )
