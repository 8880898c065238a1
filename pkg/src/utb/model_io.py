"""JSON model files.

Layout (format_version 1)::

    {
      "format_version": 1,
      "booster_kind": "tddp" | "causalgbm",
      "loss": null | "squared" | "logistic",
      "K": <number of treatment arms, control excluded>,
      "shrinkage": <float, already folded into the leaf values>,
      "ensemble_mode": "boosting" | "bagging",
      "feature_names": [...],
      "seed": <int>,
      "config": {<training configuration echo>},
      "trees": [
        {"nodes": [{"feature": f, "threshold": x, "threshold_bin": b,
                    "nan_left": bool, "left": i, "right": j, "gain": g}
                   | {"leaf": k}, ...],
         "leaf_values": [[...], ...]}
      ]
    }

Node 0 is the root. ``leaf_values[k]`` is ``[tau]`` for TDDP and
``[v, u_1, ..., u_K]`` for CausalGBM. Floats are written in Python's
shortest round-trip form, so loading restores every bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from utb.booster import BoosterModel
from utb.trees import UpliftTree

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file that is not valid JSON or violates the schema."""


def to_dict(model: BoosterModel) -> dict:
    trees = []
    for tree in model.trees:
        nodes = []
        for k in range(tree.num_nodes):
            if tree.left[k] < 0:
                nodes.append({"leaf": int(tree.leaf_index[k])})
            else:
                nodes.append(
                    {
                        "feature": int(tree.feature[k]),
                        "gain": float(tree.gain[k]),
                        "threshold": float(tree.threshold[k]),
                        "threshold_bin": int(tree.threshold_bin[k]),
                        "nan_left": bool(tree.nan_left[k]),
                        "left": int(tree.left[k]),
                        "right": int(tree.right[k]),
                    }
                )
        trees.append({"nodes": nodes, "leaf_values": [[float(v) for v in row] for row in tree.leaf_values]})
    return {
        "format_version": FORMAT_VERSION,
        "booster_kind": model.kind,
        "loss": model.loss,
        "K": model.K,
        "shrinkage": float(model.shrinkage),
        "ensemble_mode": model.ensemble_mode,
        "feature_names": list(model.feature_names),
        "seed": int(model.seed),
        "config": model.config,
        "trees": trees,
    }


def dumps(model: BoosterModel) -> str:
    try:
        return json.dumps(to_dict(model), sort_keys=True, indent=1, allow_nan=False) + "\n"
    except ValueError as exc:
        raise ModelFormatError(f"model holds a non-finite number: {exc}") from None


def save(model: BoosterModel, path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def _field(doc, name, kinds, where="model"):
    if name not in doc:
        raise ModelFormatError(f"{where}: missing field {name!r}")
    value = doc[name]
    if not isinstance(value, kinds) or (isinstance(value, bool) and bool not in _tuple(kinds)):
        raise ModelFormatError(f"{where}: field {name!r} has wrong type {type(value).__name__}")
    return value


def _tuple(kinds):
    return kinds if isinstance(kinds, tuple) else (kinds,)


def _tree_from_dict(doc, where, width) -> UpliftTree:
    nodes = _field(doc, "nodes", list, where)
    values = _field(doc, "leaf_values", list, where)
    n = len(nodes)
    if n == 0:
        raise ModelFormatError(f"{where}: field 'nodes' is empty")
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.zeros(n)
    tbin = np.zeros(n, dtype=np.int64)
    nan_left = np.zeros(n, dtype=bool)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    leaf_index = np.full(n, -1, dtype=np.int64)
    gain = np.zeros(n)
    for k, node in enumerate(nodes):
        at = f"{where}.nodes[{k}]"
        if not isinstance(node, dict):
            raise ModelFormatError(f"{at}: expected an object")
        if "leaf" in node:
            leaf_index[k] = _field(node, "leaf", int, at)
            continue
        feature[k] = _field(node, "feature", int, at)
        gain[k] = _field(node, "gain", (int, float), at)
        threshold[k] = _field(node, "threshold", (int, float), at)
        tbin[k] = _field(node, "threshold_bin", int, at)
        nan_left[k] = _field(node, "nan_left", bool, at)
        left[k] = _field(node, "left", int, at)
        right[k] = _field(node, "right", int, at)
        for name, child in (("left", left[k]), ("right", right[k])):
            if not k < child < n:
                raise ModelFormatError(f"{at}: field {name!r} points outside the node array")
    leaves = np.flatnonzero(left < 0)
    if sorted(leaf_index[leaves].tolist()) != list(range(len(values))):
        raise ModelFormatError(f"{where}: field 'leaf_values' does not match the leaf indices")
    rows = []
    for j, row in enumerate(values):
        if not isinstance(row, list) or len(row) != width or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
        ):
            raise ModelFormatError(f"{where}.leaf_values[{j}]: expected {width} numbers")
        rows.append([float(v) for v in row])
    return UpliftTree(
        feature=feature,
        threshold=threshold,
        threshold_bin=tbin,
        nan_left=nan_left,
        left=left,
        right=right,
        leaf_index=leaf_index,
        leaf_values=np.array(rows, dtype=np.float64).reshape(len(rows), width),
        gain=gain,
    )


def from_dict(doc) -> BoosterModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model: expected a JSON object")
    version = _field(doc, "format_version", int)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version} (this build reads {FORMAT_VERSION})")
    kind = _field(doc, "booster_kind", str)
    if kind not in ("tddp", "causalgbm"):
        raise ModelFormatError(f"model: field 'booster_kind' has unknown value {kind!r}")
    K = _field(doc, "K", int)
    if K < 1 or (kind == "tddp" and K != 1):
        raise ModelFormatError(f"model: field 'K' has invalid value {K}")
    loss = doc.get("loss")
    if kind == "causalgbm" and loss not in ("squared", "logistic"):
        raise ModelFormatError(f"model: field 'loss' has invalid value {loss!r}")
    mode = _field(doc, "ensemble_mode", str)
    if mode not in ("boosting", "bagging"):
        raise ModelFormatError(f"model: field 'ensemble_mode' has unknown value {mode!r}")
    names = _field(doc, "feature_names", list)
    width = 1 if kind == "tddp" else K + 1
    trees = [_tree_from_dict(t, f"trees[{i}]", width) for i, t in enumerate(_field(doc, "trees", list))]
    for i, tree in enumerate(trees):
        if tree.feature.max() >= len(names):
            raise ModelFormatError(f"trees[{i}]: field 'feature' exceeds the feature count")
    return BoosterModel(
        kind=kind,
        trees=trees,
        n_arms=K + 1,
        shrinkage=float(_field(doc, "shrinkage", (int, float))),
        ensemble_mode=mode,
        feature_names=names,
        loss=loss,
        config=_field(doc, "config", dict),
        seed=_field(doc, "seed", int),
    )


def loads(text: str) -> BoosterModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return from_dict(doc)


def load(path) -> BoosterModel:
    return loads(Path(path).read_text(encoding="utf-8"))
