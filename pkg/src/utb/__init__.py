"""Gradient-boosted uplift trees: TDDP and CausalGBM boosters."""

from utb.dataset import (
    BinnedDataset,
    ConfigError,
    DataError,
    SyntheticSpec,
    UpliftDataset,
    bin_features,
    load_csv,
    split_folds,
    summarize,
    synthesize,
)
from utb.trees import GrowthConfig, UpliftTree
from utb.booster import BoosterModel
from utb.tddp import TddpConfig, fit_tddp, predict_tddp
from utb.causalgbm import CausalConfig, Loss, fit_causalgbm, predict_effect, predict_outcome
from utb.evaluation import QiniCurve, qini_curve, qini_coefficient, cross_validate, ablate_ensembles
from utb.model_io import load, save

__version__ = "0.1.0"

__all__ = [
    "BinnedDataset",
    "BoosterModel",
    "CausalConfig",
    "ConfigError",
    "DataError",
    "GrowthConfig",
    "Loss",
    "QiniCurve",
    "SyntheticSpec",
    "TddpConfig",
    "UpliftDataset",
    "UpliftTree",
    "ablate_ensembles",
    "bin_features",
    "cross_validate",
    "fit_causalgbm",
    "fit_tddp",
    "load",
    "load_csv",
    "predict_effect",
    "predict_outcome",
    "predict_tddp",
    "qini_coefficient",
    "qini_curve",
    "save",
    "split_folds",
    "summarize",
    "synthesize",
]
