"""Qini evaluation, cross-validation and the boosting-vs-bagging ablation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from utb._rng import stream
from utb.causalgbm import CausalConfig, fit_causalgbm, predict_effect
from utb.dataset import ConfigError, DataError, SyntheticSpec, UpliftDataset, split_folds, synthesize
from utb.tddp import TddpConfig, fit_tddp, predict_tddp


class FoldError(RuntimeError):
    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold


@dataclass(frozen=True)
class QiniCurve:
    fractions: np.ndarray
    gains: np.ndarray
    auq: float
    coefficient: float = math.nan

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.gains.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["fraction", "gain"])
            for x, q in self.points:
                out.writerow([repr(x), repr(q)])


def _check_binary_arms(y, w):
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w)
    if y.shape != w.shape:
        raise DataError(f"y and w lengths differ: {y.shape} vs {w.shape}")
    if not np.all((w == 0) | (w == 1)):
        raise DataError("Qini needs a binary treatment indicator")
    if not (w == 1).any() or not (w == 0).any():
        raise DataError("Qini needs at least one treated and one control row")
    return y, w.astype(np.int64)


def _curve(scores, y, w):
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    ys, ws = y[order], w[order]
    # last position of each tie block
    ends = np.append(np.flatnonzero(s[1:] != s[:-1]), s.size - 1)
    y1 = np.cumsum(ys * ws)[ends]
    y0 = np.cumsum(ys * (1 - ws))[ends]
    n1 = np.cumsum(ws)[ends].astype(np.float64)
    n0 = np.cumsum(1 - ws)[ends].astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(n0 > 0, y1 - y0 * (n1 / n0), y1)
    fractions = np.append(0.0, (ends + 1) / s.size)
    gains = np.append(0.0, q)
    auq = float(np.sum(np.diff(fractions) * (gains[1:] + gains[:-1]) / 2.0))
    return fractions, gains, auq


def perfect_scores(y, w) -> np.ndarray:
    """Scores that rank rows in the ideal order for the normalization.

    Binary outcomes: treated responders and control non-responders first,
    then everyone else, each group in index order. Continuous outcomes:
    treated by descending outcome, then control by ascending outcome.
    """
    y, w = _check_binary_arms(y, w)
    n = y.size
    idx = np.arange(n)
    if np.all((y == 0) | (y == 1)):
        first = ((w == 1) & (y == 1)) | ((w == 0) & (y == 0))
        order = np.concatenate([idx[first], idx[~first]])
    else:
        t, c = idx[w == 1], idx[w == 0]
        order = np.concatenate([t[np.argsort(-y[t], kind="stable")], c[np.argsort(y[c], kind="stable")]])
    scores = np.empty(n)
    scores[order] = np.arange(n, 0, -1, dtype=np.float64)
    return scores


def qini_coefficient(curve: QiniCurve, y, w) -> float:
    """``(AUQ - AUQ_random) / (AUQ_perfect - AUQ_random)``; NaN when undefined."""
    y, w = _check_binary_arms(y, w)
    random_area = 0.5 * float(curve.gains[-1])
    _, _, perfect_area = _curve(perfect_scores(y, w), y, w)
    denom = perfect_area - random_area
    if denom == 0:
        return math.nan
    return (curve.auq - random_area) / denom


def qini_curve(scores, y, w) -> QiniCurve:
    """Cumulative incremental gain of rows targeted by descending score.

    Rows with equal scores form one block: the curve has a point at the end
    of each block only, so the order inside a block never matters.
    """
    y, w = _check_binary_arms(y, w)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != y.shape:
        raise DataError(f"scores length {scores.shape} does not match outcomes {y.shape}")
    if np.isnan(scores).any():
        raise DataError("scores contain NaN")
    fractions, gains, auq = _curve(scores, y, w)
    curve = QiniCurve(fractions, gains, auq)
    return replace(curve, coefficient=qini_coefficient(curve, y, w))


# --------------------------------------------------------------------------
# cross-validation


def _fit(data, cfg, threads):
    if isinstance(cfg, TddpConfig):
        return fit_tddp(data, cfg, threads)
    if isinstance(cfg, CausalConfig):
        return fit_causalgbm(data, cfg, threads)
    raise ConfigError(f"unknown booster config {type(cfg).__name__}")


def uplift_scores(model, X) -> np.ndarray:
    """Ranking score: TDDP uplift or CausalGBM margin-scale effect of arm 1."""
    if model.kind == "tddp":
        return predict_tddp(model, X)
    return predict_effect(model, X)[:, 0]


@dataclass
class CVReport:
    coefficients: list
    oracle_coefficients: Optional[list] = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.coefficients))

    @property
    def se(self) -> float:
        c = np.asarray(self.coefficients)
        return float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else math.nan

    @property
    def oracle_mean(self) -> Optional[float]:
        return None if self.oracle_coefficients is None else float(np.mean(self.oracle_coefficients))

    def format(self) -> str:
        lines = [f"fold {j}: {c:.4f}" for j, c in enumerate(self.coefficients)]
        lines.append(f"Qini coefficient: {self.mean:.4f} +/- {self.se:.4f} (mean +/- s.e.)")
        if self.oracle_coefficients is not None:
            lines.append(f"oracle (true effect) ranking: {self.oracle_mean:.4f}")
        return "\n".join(lines)


def cross_validate(data: UpliftDataset, cfg, k: int = 10, seed: int = 0, threads=None) -> CVReport:
    """Fit on each fold's training rows and score Qini on its held-out rows."""
    if data.K != 1:
        raise ConfigError("cross-validated Qini needs binary treatment")
    coefs, oracle = [], []
    for j, (train, test) in enumerate(split_folds(data, k, seed)):
        try:
            model = _fit(data.subset(train), cfg, threads)
        except Exception as exc:
            raise FoldError(j, exc) from exc
        held = data.subset(test)
        coefs.append(qini_curve(uplift_scores(model, held.features), held.outcome, held.treatment).coefficient)
        if held.true_effect is not None:
            oracle.append(qini_curve(held.true_effect[:, 0], held.outcome, held.treatment).coefficient)
    return CVReport(coefs, oracle if data.true_effect is not None else None)


# --------------------------------------------------------------------------
# ablation

ABLATION_COLUMNS = ("method", "mode", "features", "train_qini", "test_qini")


def ablate_ensembles(
    specs: Sequence[SyntheticSpec],
    tddp_cfg: TddpConfig,
    causal_cfg: CausalConfig,
    seed: int = 0,
    threads=None,
) -> list[dict]:
    """Boosting vs bagging for both boosters over a range of feature counts.

    Each dataset is split 50/50 into train and test. Returns one row per
    (method, mode, feature count) with train and test Qini coefficients.
    """
    rows = []
    for spec in specs:
        data = synthesize(spec)
        perm = stream(seed, "split", spec.p).permutation(data.n)
        half = data.n // 2
        train, test = data.subset(np.sort(perm[:half])), data.subset(np.sort(perm[half:]))
        for method, base in (("tddp", tddp_cfg), ("causalgbm", causal_cfg)):
            for mode in ("boosting", "bagging"):
                model = _fit(train, replace(base, ensemble_mode=mode), threads)
                result = {"method": method, "mode": mode, "features": spec.p}
                for name, part in (("train_qini", train), ("test_qini", test)):
                    scores = uplift_scores(model, part.features)
                    result[name] = qini_curve(scores, part.outcome, part.treatment).coefficient
                rows.append(result)
    return rows


def format_table(rows: list[dict], columns=None) -> str:
    """Aligned plain-text table."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    cells = [[_fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    # text columns align left, numbers right
    left = [isinstance(rows[0][c], str) for c in columns]
    lines = ["  ".join(c.ljust(wd) if lf else c.rjust(wd) for c, wd, lf in zip(columns, widths, left))]
    lines += [
        "  ".join(v.ljust(wd) if lf else v.rjust(wd) for v, wd, lf in zip(row, widths, left)) for row in cells
    ]
    return "\n".join(lines)


def rows_to_csv(rows: list[dict], columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else ABLATION_COLUMNS))
    buf = io.StringIO()
    out = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    out.writeheader()
    for r in rows:
        out.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns})
    return buf.getvalue()


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else str(v)
