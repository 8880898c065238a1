"""Command-line interface: ``utb {train,predict,eval,cv,synth,ablate,summary}``.

Exit status is 0 on success, 1 on runtime failures (bad data, I/O) and 2 on
usage or configuration errors. ``--config FILE`` reads a TOML file whose
keys are the long flag names with dashes turned into underscores; flags
given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from utb.booster import ShapeError
from utb.causalgbm import CausalConfig, fit_causalgbm, predict_effect, predict_outcome
from utb.dataset import (
    ConfigError,
    DataError,
    SyntheticSpec,
    load_csv,
    summarize,
    synthesize,
    write_csv,
)
from utb.evaluation import (
    ABLATION_COLUMNS,
    FoldError,
    ablate_ensembles,
    cross_validate,
    format_table,
    qini_curve,
    rows_to_csv,
)
from utb.model_io import ModelFormatError, load, save
from utb.tddp import TddpConfig, fit_tddp, predict_tddp
from utb.trees import GrowthConfig, resolve_threads

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("utb")

# defaults for options that may also come from --config
DEFAULTS = {
    "booster": "causalgbm",
    "outcome": "y",
    "treatment": "w",
    "trees": 100,
    "shrinkage": 0.1,
    "max_leaves": 31,
    "max_depth": None,
    "min_samples_leaf": 20,
    "min_samples_per_arm": 5,
    "min_gain": 0.0,
    "reg_lambda": 0.0,
    "max_bins": 255,
    "loss": "squared",
    "mode": "boosting",
    "seed": 0,
    "threads": None,
    "folds": 10,
}


def _add_data(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--treatment", help="treatment column (default w); 0 marks control")


def _add_booster(p):
    p.add_argument("--booster", choices=("tddp", "causalgbm"))
    p.add_argument("--trees", type=int, help="number of boosting iterations M")
    p.add_argument("--shrinkage", type=float, help="learning rate in (0, 1]")
    p.add_argument("--max-leaves", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-samples-leaf", type=int)
    p.add_argument("--min-samples-per-arm", type=int)
    p.add_argument("--min-gain", type=float)
    p.add_argument("--reg-lambda", type=float)
    p.add_argument("--max-bins", type=int)
    p.add_argument("--loss", choices=("squared", "logistic"))
    p.add_argument("--mode", choices=("boosting", "bagging"))


def _add_common(p):
    p.add_argument("--config", help="TOML file of defaults (keys = flag names with underscores)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="histogram worker threads (env UTB_THREADS)")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="utb", description="Boosted uplift trees (TDDP, CausalGBM).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and save it as JSON")
    _add_data(p)
    _add_booster(p)
    _add_common(p)
    p.add_argument("--out", help="model output path")

    p = sub.add_parser("predict", help="score a CSV with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--output", action="append", choices=("effect", "outcome"),
                   help="quantity to write; repeatable (default effect)")
    p.add_argument("--arm", type=int, help="treatment arm (outcome default 0, effect default all)")
    p.add_argument("--scale", choices=("margin", "probability"), default="margin")
    p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("eval", help="Qini report for externally computed scores")
    p.add_argument("--scores", required=True, help="CSV holding the score column")
    p.add_argument("--score-col", help="score column name (default: first column)")
    _add_data(p)
    p.add_argument("--curve-out", help="write curve points (fraction,gain) as CSV")
    p.add_argument("--config")
    p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("cv", help="k-fold cross-validated Qini coefficient")
    _add_data(p)
    _add_booster(p)
    _add_common(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--out", help="write per-fold coefficients as CSV")

    p = sub.add_parser("synth", help="write a synthetic dataset with known effects")
    p.add_argument("--n", type=int, default=200_000)
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--effect", type=float, default=SyntheticSpec.effect_strength)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--kind", choices=("binary", "continuous"), default="binary")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--with-truth", action="store_true", help="append __true_effect_k columns")
    p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("ablate", help="boosting vs bagging over feature counts")
    p.add_argument("--dims", default="5,20,50,100", help="comma-separated feature counts")
    p.add_argument("--n", type=int, default=20_000)
    _add_booster(p)
    _add_common(p)
    p.add_argument("--out", help="write the table as CSV")

    p = sub.add_parser("summary", help="dataset statistics")
    _add_data(p)
    p.add_argument("--config")
    p.add_argument("--verbose", "-v", action="store_true")
    return parser


def resolve(args) -> dict:
    """Merge flags over the optional config file over built-in defaults."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                file_values = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
    known = set(vars(args)) - {"command", "config"}
    for key in file_values:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    merged = {}
    for key in known:
        flag = getattr(args, key)
        if flag is not None and flag is not False:
            merged[key] = flag
        elif key in file_values:
            merged[key] = file_values[key]
        elif key in DEFAULTS:
            merged[key] = DEFAULTS[key]
        else:
            merged[key] = flag
    return merged


def _require(opts, *keys):
    for key in keys:
        if opts.get(key) in (None, ""):
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def _booster_config(opts):
    try:
        growth = GrowthConfig(
            max_leaves=int(opts["max_leaves"]),
            max_depth=None if opts["max_depth"] is None else int(opts["max_depth"]),
            min_samples_leaf=int(opts["min_samples_leaf"]),
            min_samples_per_arm_leaf=int(opts["min_samples_per_arm"]),
            min_gain=float(opts["min_gain"]),
            reg_lambda=float(opts["reg_lambda"]),
        )
        common = dict(
            num_trees=int(opts["trees"]),
            shrinkage=float(opts["shrinkage"]),
            growth=growth,
            ensemble_mode=opts["mode"],
            seed=int(opts["seed"]),
            max_bins=int(opts["max_bins"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid booster option: {exc}") from None
    if opts["booster"] == "tddp":
        return TddpConfig(**common)
    if opts["booster"] == "causalgbm":
        return CausalConfig(loss=opts["loss"], **common)
    raise ConfigError(f"unknown booster {opts['booster']!r}")


def _load_data(opts):
    _require(opts, "data")
    return load_csv(opts["data"], opts["outcome"], opts["treatment"])


def cmd_train(opts) -> int:
    _require(opts, "out")
    cfg = _booster_config(opts)
    threads = resolve_threads(opts["threads"])
    data = _load_data(opts)
    if isinstance(cfg, TddpConfig) and data.K != 1:
        raise ConfigError(f"tddp supports binary treatment; data has {data.K} treatment arms")
    callback = None
    if opts.get("verbose"):
        label = "treated label variance" if isinstance(cfg, TddpConfig) else "training loss"

        def callback(m, value):
            print(f"[{m + 1}] {label}: {value:.6g}", file=sys.stderr)

    fit = fit_tddp if isinstance(cfg, TddpConfig) else fit_causalgbm
    model = fit(data, cfg, threads=threads, callback=callback)
    save(model, opts["out"])
    return 0


def _read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(c) if c.strip() else np.nan for c in row])
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric cell") from None
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def cmd_predict(opts) -> int:
    model = load(opts["model"])
    header, M = _read_matrix(opts["data"])
    names = model.feature_names
    if all(n in header for n in names):
        X = M[:, [header.index(n) for n in names]]
    elif len(header) == len(names):
        X = M
    else:
        raise ShapeError(f"model expects {len(names)} features, found {len(header)} columns")
    outputs = opts["output"] or ["effect"]
    arm = opts["arm"]
    if arm is not None and not 0 <= arm < model.n_arms:
        raise ConfigError(f"unknown arm {arm}; model has arms 0..{model.n_arms - 1}")
    cols, values = [], []
    for what in outputs:
        if what == "effect":
            if model.kind == "tddp":
                eff = predict_tddp(model, X)[:, None]
            else:
                eff = predict_effect(model, X, scale=opts["scale"])
            arms = range(1, model.n_arms) if arm in (None, 0) else [arm]
            for a in arms:
                cols.append(f"effect_{a}")
                values.append(eff[:, a - 1])
        else:
            if model.kind == "tddp":
                raise ConfigError("tddp models estimate uplift only; --output outcome needs causalgbm")
            a = 0 if arm is None else arm
            cols.append(f"outcome_{a}")
            values.append(predict_outcome(model, X, a, scale=opts["scale"]))
    with open(opts["out"], "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(cols)
        for row in zip(*values):
            out.writerow([repr(float(v)) for v in row])
    return 0


def cmd_eval(opts) -> int:
    data = _load_data(opts)
    header, M = _read_matrix(opts["scores"])
    col = opts.get("score_col") or header[0]
    if col not in header:
        raise ConfigError(f"score column {col!r} not found in {opts['scores']}")
    scores = M[:, header.index(col)]
    if scores.shape[0] != data.n:
        raise DataError(f"{scores.shape[0]} scores for {data.n} data rows")
    if data.K != 1:
        raise ConfigError("Qini evaluation needs binary treatment")
    curve = qini_curve(scores, data.outcome, data.treatment)
    print(f"rows: {data.n}")
    print(f"area under Qini curve: {curve.auq:.6g}")
    print(f"Qini coefficient: {curve.coefficient:.4f}")
    if opts.get("curve_out"):
        curve.to_csv(opts["curve_out"])
    return 0


def cmd_cv(opts) -> int:
    cfg = _booster_config(opts)
    data = _load_data(opts)
    if isinstance(cfg, TddpConfig) and data.K != 1:
        raise ConfigError(f"tddp supports binary treatment; data has {data.K} treatment arms")
    report = cross_validate(data, cfg, int(opts["folds"]), int(opts["seed"]), resolve_threads(opts["threads"]))
    print(report.format())
    if opts.get("out"):
        rows = [{"fold": j, "qini": c} for j, c in enumerate(report.coefficients)]
        Path(opts["out"]).write_text(rows_to_csv(rows, ["fold", "qini"]), encoding="utf-8")
    return 0


def cmd_synth(opts) -> int:
    spec = SyntheticSpec(
        n=opts["n"],
        p=opts["p"],
        treatment_ratio=opts["ratio"],
        effect_strength=opts["effect"],
        noise_sd=opts["noise"],
        outcome_kind=opts["kind"],
        seed=opts["seed"],
    )
    write_csv(synthesize(spec), opts["out"], with_truth=opts["with_truth"])
    return 0


def cmd_ablate(opts) -> int:
    try:
        dims = [int(d) for d in str(opts["dims"]).split(",") if d.strip()]
    except ValueError:
        raise ConfigError(f"--dims must be comma-separated integers, got {opts['dims']!r}") from None
    opts = dict(opts, booster="tddp")
    tddp_cfg = _booster_config(opts)
    causal_cfg = _booster_config(dict(opts, booster="causalgbm"))
    specs = [SyntheticSpec(n=int(opts["n"]), p=p, seed=int(opts["seed"])) for p in dims]
    rows = ablate_ensembles(specs, tddp_cfg, causal_cfg, int(opts["seed"]), resolve_threads(opts["threads"]))
    print(format_table(rows, ABLATION_COLUMNS))
    if opts.get("out"):
        Path(opts["out"]).write_text(rows_to_csv(rows, ABLATION_COLUMNS), encoding="utf-8")
    return 0


def cmd_summary(opts) -> int:
    row = summarize(_load_data(opts)).as_row()
    width = max(len(k) for k in row)
    for k, v in row.items():
        print(f"{k.ljust(width)}  {v}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "synth": cmd_synth,
    "ablate": cmd_ablate,
    "summary": cmd_summary,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, FoldError) as exc:
        code = 2 if isinstance(exc, ConfigError) or isinstance(exc.__cause__, ConfigError) else 1
        print(f"utb {args.command}: {exc}", file=sys.stderr)
        return code
    except (DataError, ShapeError, ModelFormatError, OSError, ArithmeticError) as exc:
        print(f"utb {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
