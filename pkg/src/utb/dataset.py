"""Uplift datasets: CSV loading, quantile binning, folds and a synthetic generator."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from utb._rng import stream

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad user configuration: missing column, out-of-range parameter."""


class DataError(ValueError):
    """Input data that cannot be parsed or violates dataset invariants."""


@dataclass(frozen=True)
class UpliftDataset:
    features: np.ndarray
    outcome: np.ndarray
    treatment: np.ndarray
    feature_names: list[str]
    true_effect: Optional[np.ndarray] = None
    # original treatment value of each arm index, arm 0 is always the literal 0
    arm_labels: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        y = np.asarray(self.outcome, dtype=np.float64)
        w = np.asarray(self.treatment)
        if y.shape != (X.shape[0],) or w.shape != (X.shape[0],):
            raise DataError(
                f"outcome/treatment lengths {y.shape}/{w.shape} do not match {X.shape[0]} rows"
            )
        if not np.all(np.isfinite(y)):
            raise DataError("outcome contains NaN or infinite values")
        if w.size and (w.min() < 0 or not np.all(w == np.round(w))):
            raise DataError("treatment must hold non-negative integer arm indices")
        w = w.astype(np.int64)
        if len(self.feature_names) != X.shape[1]:
            raise DataError(f"{len(self.feature_names)} feature names for {X.shape[1]} columns")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "treatment", w)
        object.__setattr__(self, "feature_names", list(self.feature_names))
        if self.true_effect is not None:
            te = np.asarray(self.true_effect, dtype=np.float64)
            if te.ndim == 1:
                te = te[:, None]
            object.__setattr__(self, "true_effect", te)
        if not self.arm_labels:
            object.__setattr__(self, "arm_labels", tuple(range(self.n_arms)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_arms(self) -> int:
        """Number of arms including control, i.e. K + 1."""
        return int(self.treatment.max()) + 1 if self.n else 0

    @property
    def K(self) -> int:
        return self.n_arms - 1

    def validate(self) -> None:
        """Raise DataError unless the dataset can be trained on."""
        counts = np.bincount(self.treatment, minlength=2)
        if counts[0] == 0:
            raise DataError("no control rows (treatment value 0)")
        if len(counts) < 2 or counts[1:].sum() == 0:
            raise DataError("no treated rows")
        empty = [a for a in range(1, len(counts)) if counts[a] == 0]
        if empty:
            raise DataError(f"treatment arms {empty} have no rows")

    def subset(self, rows) -> UpliftDataset:
        rows = np.asarray(rows)
        return UpliftDataset(
            features=self.features[rows],
            outcome=self.outcome[rows],
            treatment=self.treatment[rows],
            feature_names=self.feature_names,
            true_effect=None if self.true_effect is None else self.true_effect[rows],
            arm_labels=self.arm_labels,
        )


def load_csv(path, outcome_col: str, treatment_col: str) -> UpliftDataset:
    """Read a headered CSV into a validated dataset.

    Every column other than the outcome and treatment columns is a numeric
    feature; empty cells become NaN. Treatment values are remapped to
    ``0..K`` in sorted order, and the file must use the literal value 0 for
    control.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (outcome_col, treatment_col):
            if col not in header:
                raise ConfigError(f"column {col!r} not found in {path} (have {header})")
        y_idx = header.index(outcome_col)
        w_idx = header.index(treatment_col)
        truth_idx = [j for j, h in enumerate(header) if h.startswith("__true_effect_")]
        feat_idx = [j for j in range(len(header)) if j not in (y_idx, w_idx) and j not in truth_idx]
        rows_X, rows_y, rows_w, rows_t = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            rows_X.append([_parse_cell(row[j], path, lineno, header[j]) for j in feat_idx])
            rows_t.append([_parse_cell(row[j], path, lineno, header[j]) for j in truth_idx])
            for j, dest in ((y_idx, rows_y), (w_idx, rows_w)):
                v = _parse_cell(row[j], path, lineno, header[j])
                if math.isnan(v):
                    raise DataError(f"{path}:{lineno}: column {header[j]!r} may not be empty")
                dest.append(v)

    X = np.array(rows_X, dtype=np.float64).reshape(len(rows_X), len(feat_idx))
    raw_w = np.array(rows_w, dtype=np.float64)
    if not np.all(raw_w == np.round(raw_w)):
        raise DataError(f"{path}: treatment column {treatment_col!r} must hold integers")
    raw_w = raw_w.astype(np.int64)
    labels = np.unique(raw_w)
    if 0 not in labels:
        raise DataError(f"{path}: no control rows (treatment value 0)")
    if labels.size < 2:
        raise DataError(f"{path}: no treated rows")
    if labels[0] < 0:
        raise DataError(f"{path}: negative treatment value {labels[0]}")
    w = np.searchsorted(labels, raw_w)
    data = UpliftDataset(
        features=X,
        outcome=np.array(rows_y, dtype=np.float64),
        treatment=w,
        feature_names=[header[j] for j in feat_idx],
        true_effect=np.array(rows_t, dtype=np.float64) if truth_idx else None,
        arm_labels=tuple(int(v) for v in labels),
    )
    data.validate()
    return data


def _parse_cell(text, path, lineno, column):
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}: row {lineno}, column {column!r}: cannot parse {text!r} as a number"
        ) from None


def write_csv(data: UpliftDataset, path, outcome_col="y", treatment_col="w", with_truth=False):
    """Write ``data`` in the format ``load_csv`` reads; ``__true_effect_k`` sidecars on request."""
    header = list(data.feature_names) + [outcome_col, treatment_col]
    if with_truth:
        if data.true_effect is None:
            raise ConfigError("dataset has no ground-truth effects to write")
        header += [f"__true_effect_{k + 1}" for k in range(data.true_effect.shape[1])]
    labels = np.asarray(data.arm_labels)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for i in range(data.n):
            row = ["" if math.isnan(v) else repr(float(v)) for v in data.features[i]]
            row.append(repr(float(data.outcome[i])))
            row.append(str(int(labels[data.treatment[i]])))
            if with_truth:
                row += [repr(float(v)) for v in data.true_effect[i]]
            out.writerow(row)


# --------------------------------------------------------------------------
# binning


@dataclass(frozen=True)
class BinnedDataset:
    """Quantized features for histogram split finding.

    ``bins`` has shape ``(p, n)``: one contiguous row of bin indices per
    feature. Bin 0 holds NaN; bins ``1..len(upper_edges[f])`` hold values,
    bin ``b`` covering ``upper_edges[f][b-2] < x <= upper_edges[f][b-1]``.
    The last upper edge of a feature with any values is ``+inf``.
    """

    bins: np.ndarray
    upper_edges: list
    max_bins: int = 255

    @property
    def n(self) -> int:
        return self.bins.shape[1]

    @property
    def p(self) -> int:
        return self.bins.shape[0]

    def n_bins(self, feature: int) -> int:
        """Number of bins of ``feature`` including the NaN bin."""
        return len(self.upper_edges[feature]) + 1

    @property
    def total_bins(self) -> int:
        return max((self.n_bins(f) for f in range(self.p)), default=1)

    def threshold_value(self, feature: int, threshold_bin: int) -> float:
        """Real cut value: rows with ``x <= value`` are in bins ``1..threshold_bin``."""
        return float(self.upper_edges[feature][threshold_bin - 1])

    def transform(self, X) -> np.ndarray:
        """Bin new rows with the stored edges; returns shape ``(p, n)``."""
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros((X.shape[1], X.shape[0]), dtype=self.bins.dtype)
        for f in range(X.shape[1]):
            out[f] = _bin_column(X[:, f], self.upper_edges[f])
        return out


def _bin_column(x, edges):
    if len(edges) == 0:
        return np.zeros(x.shape[0], dtype=np.int64)
    b = np.searchsorted(edges, x, side="left") + 1
    b[np.isnan(x)] = 0
    return b


def bin_features(data: UpliftDataset, max_bins: int = 255) -> BinnedDataset:
    """Equal-frequency binning of every feature.

    A feature with at most ``max_bins`` distinct values gets one bin per
    value. Otherwise the cut points are the empirical quantiles at
    ``k / max_bins``, with repeated cut points merged.
    """
    if not 2 <= max_bins <= 65535:
        raise ConfigError(f"max_bins must lie in [2, 65535], got {max_bins}")
    X = data.features if isinstance(data, UpliftDataset) else np.asarray(data, dtype=np.float64)
    dtype = np.uint8 if max_bins <= 255 else np.uint16
    n, p = X.shape
    bins = np.zeros((p, n), dtype=dtype)
    edges = []
    for f in range(p):
        col = X[:, f]
        vals = np.sort(col[~np.isnan(col)])
        if vals.size == 0:
            e = np.empty(0)
        else:
            distinct = np.unique(vals)
            if distinct.size <= max_bins:
                cuts = distinct[:-1]
            else:
                ranks = np.ceil(np.arange(1, max_bins) * vals.size / max_bins).astype(np.int64) - 1
                cuts = np.unique(vals[ranks])
                cuts = cuts[cuts < vals[-1]]
            e = np.append(cuts, np.inf)
        edges.append(e)
        bins[f] = _bin_column(col, e)
    return BinnedDataset(bins=bins, upper_edges=edges, max_bins=max_bins)


# --------------------------------------------------------------------------
# folds and summaries


def split_folds(data: UpliftDataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold split on (arm, binarized outcome).

    Strata are shuffled independently and dealt round-robin into folds, one
    running counter across strata, so fold sizes differ by at most one and
    every stratum is spread evenly.
    """
    data.validate()
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if data.n < k:
        raise ConfigError(f"cannot split {data.n} rows into {k} folds")
    y = data.outcome
    if np.all((y == 0) | (y == 1)):
        yb = y.astype(np.int64)
    else:
        yb = (y > np.median(y)).astype(np.int64)
    strata = data.treatment * 2 + yb
    sizes = np.bincount(strata)
    if np.any((sizes > 0) & (sizes < k)):
        logger.warning("a (arm, outcome) stratum has fewer than %d rows; stratifying by arm only", k)
        strata = data.treatment.copy()
    rng = stream(seed, "folds")
    fold_of = np.empty(data.n, dtype=np.int64)
    pos = 0
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        members = members[rng.permutation(members.size)]
        fold_of[members] = (pos + np.arange(members.size)) % k
        pos += members.size
    all_rows = np.arange(data.n)
    return [(all_rows[fold_of != j], all_rows[fold_of == j]) for j in range(k)]


@dataclass(frozen=True)
class DatasetSummary:
    size: int
    features: int
    avg_label: float
    treatment_ratio: float
    # None when the control mean is zero
    relative_uplift: Optional[float]

    def as_row(self) -> dict:
        ru = "undefined" if self.relative_uplift is None else f"{self.relative_uplift:.1f}"
        return {
            "Size": f"{self.size:,}",
            "Features": str(self.features),
            "Avg. Label": f"{self.avg_label:.3f}",
            "Treatment Ratio": f"{self.treatment_ratio:.2f}",
            "Relative Uplift (%)": ru,
        }


def summarize(data: UpliftDataset) -> DatasetSummary:
    y, w = data.outcome, data.treatment
    treated = w > 0
    ctrl_mean = y[~treated].mean() if (~treated).any() else math.nan
    trt_mean = y[treated].mean() if treated.any() else math.nan
    if ctrl_mean == 0 or math.isnan(ctrl_mean) or math.isnan(trt_mean):
        rel = None
    else:
        rel = 100.0 * (trt_mean - ctrl_mean) / ctrl_mean
    return DatasetSummary(
        size=data.n,
        features=data.p,
        avg_label=float(y.mean()) if data.n else math.nan,
        treatment_ratio=float(treated.mean()) if data.n else math.nan,
        relative_uplift=rel,
    )


# --------------------------------------------------------------------------
# synthetic data

# effect_strength giving E[tau] / E[y(0)] = 0.5 on the binary generator, which
# with treatment_ratio 0.5 also puts the average label at 0.600
CALIBRATED_STRENGTH = 0.981

_BASELINE = 0.48


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 200_000
    p: int = 100
    treatment_ratio: float = 0.5
    effect_strength: float = CALIBRATED_STRENGTH
    noise_sd: float = 1.0
    outcome_kind: str = "binary"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError(f"n and p must be positive, got n={self.n}, p={self.p}")
        if not 0.0 < self.treatment_ratio < 1.0:
            raise ConfigError(f"treatment_ratio must lie in (0, 1), got {self.treatment_ratio}")
        if self.effect_strength < 0 or self.noise_sd < 0:
            raise ConfigError("effect_strength and noise_sd must be >= 0")
        if self.outcome_kind not in ("binary", "continuous"):
            raise ConfigError(f"outcome_kind must be binary or continuous, got {self.outcome_kind!r}")
        if self.outcome_kind == "binary" and self.effect_strength > 1.0:
            raise ConfigError("binary outcomes need effect_strength <= 1 to keep probabilities valid")


def _feature(X, j):
    # features beyond p sit at the neutral value 0.5
    return X[:, j] if j < X.shape[1] else np.full(X.shape[0], 0.5)


def baseline_mean(X) -> np.ndarray:
    """E[y(0) | x]; depends on the first three features, averages 0.48."""
    x1, x2, x3 = (_feature(X, j) for j in range(3))
    return _BASELINE + 0.12 * (2 * x1 - 1) + 0.08 * np.sin(2 * np.pi * x2) + 0.06 * (2 * x3 - 1)


def true_uplift(X, effect_strength) -> np.ndarray:
    """tau(x) from interactions of the first five features, bounded by the headroom 1 - E[y(0)|x]."""
    x1, x2, x3, x4, x5 = (_feature(X, j) for j in range(5))
    z = 6.0 * (x1 * x2 + x3 * x4 - 0.5) + 4.0 * (x5 - 0.5)
    gate = 1.0 / (1.0 + np.exp(-z))
    return effect_strength * gate * (1.0 - baseline_mean(X))


def synthesize(spec: SyntheticSpec) -> UpliftDataset:
    """Randomized-experiment data with a known effect for every row.

    Features are independent U(0, 1). Only the first five carry signal; the
    rest are noise. Binary outcomes are Bernoulli with mean
    ``baseline_mean(x) + w * tau(x)``; continuous outcomes add Gaussian noise
    of scale ``noise_sd`` to the same mean.
    """
    rng = stream(spec.seed, "synth")
    X = rng.random((spec.n, spec.p))
    w = (rng.random(spec.n) < spec.treatment_ratio).astype(np.int64)
    tau = true_uplift(X, spec.effect_strength)
    mean = baseline_mean(X) + w * tau
    if spec.outcome_kind == "binary":
        y = (rng.random(spec.n) < mean).astype(np.float64)
    else:
        y = mean + spec.noise_sd * rng.standard_normal(spec.n)
    names = [f"x{j + 1}" for j in range(spec.p)]
    return UpliftDataset(features=X, outcome=y, treatment=w, feature_names=names, true_effect=tau[:, None])
