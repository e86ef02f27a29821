"""Versioned JSON model files.

Floats are written with ``repr`` precision so a load/save cycle reproduces
the file byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

from gfigs.errors import DataError, SchemaError
from gfigs.figs import TreeSumModel
from gfigs.membership import GradientBoostedModel, LogisticModel, MembershipModel, MembershipSpec
from gfigs.pipeline import GFigsModel, PipelineConfig
from gfigs.tabular import FeatureSchema, Preprocessor
from gfigs.tree import LEAF, Tree

FORMAT_VERSION = 1


class ModelFileError(DataError):
    pass


def tree_to_dict(tree: Tree, feature_names: Sequence[str] | None = None) -> dict:
    nodes = []
    for i, f in enumerate(tree.feature):
        if f == LEAF:
            nodes.append({"delta_risk": float(tree.value[i]), "weight_sum": float(tree.weight_sum[i]),
                          "n": int(tree.n[i])})
        else:
            nodes.append({"feature": feature_names[f] if feature_names is not None else int(f),
                          "threshold": float(tree.threshold[i]),
                          "left": int(tree.left[i]), "right": int(tree.right[i])})
    return {"nodes": nodes}


def tree_from_dict(d: Mapping, feature_names: Sequence[str] | None = None) -> Tree:
    index = None if feature_names is None else {n: j for j, n in enumerate(feature_names)}
    tree = Tree()
    nodes = d["nodes"]
    for nd in nodes:
        if "delta_risk" in nd:
            tree._add_leaf(float(nd["delta_risk"]), float(nd["weight_sum"]), int(nd["n"]), 0)
            continue
        f = nd["feature"]
        if index is not None:
            if f not in index:
                raise SchemaError(f"tree references unknown feature {f!r}")
            f = index[f]
        tree.feature.append(int(f))
        tree.threshold.append(float(nd["threshold"]))
        tree.left.append(int(nd["left"]))
        tree.right.append(int(nd["right"]))
        tree.value.append(0.0)
        tree.weight_sum.append(0.0)
        tree.n.append(0)
        tree.depth.append(0)
    for i, f in enumerate(tree.feature):
        if f != LEAF:
            for c in (tree.left[i], tree.right[i]):
                if not 0 < c < len(nodes):
                    raise ModelFileError(f"node {i} has invalid child {c}")
                tree.depth[c] = tree.depth[i] + 1
    return tree


def tree_sum_to_dict(m: TreeSumModel, feature_names) -> dict:
    return {
        "intercept": float(m.intercept),
        "max_splits": m.max_splits,
        "total_splits": m.total_splits,
        "trees": [tree_to_dict(t, feature_names) for t in m.trees],
    }


def tree_sum_from_dict(d: Mapping, feature_names) -> TreeSumModel:
    return TreeSumModel(
        trees=[tree_from_dict(t, feature_names) for t in d["trees"]],
        intercept=float(d["intercept"]),
        max_splits=d.get("max_splits"),
        n_features=len(feature_names),
    )


def membership_to_dict(m: MembershipModel) -> dict:
    return {
        "spec": m.spec.to_dict(),
        "groups": list(m.groups),
        "feature_names": list(m.feature_names),
        "excluded_features": list(m.excluded_features),
        "models": {g: sub.to_dict() for g, sub in m.models.items()},
    }


def membership_from_dict(d: Mapping) -> MembershipModel:
    models = {}
    for g, sub in d["models"].items():
        cls = LogisticModel if sub["type"] == "logistic" else GradientBoostedModel
        models[g] = cls.from_dict(sub)
    return MembershipModel(
        groups=tuple(d["groups"]),
        models=models,
        feature_names=tuple(d["feature_names"]),
        excluded_features=tuple(d.get("excluded_features", ())),
        spec=MembershipSpec.from_dict(d["spec"]),
    )


def model_to_dict(model: GFigsModel) -> dict:
    names = list(model.feature_names)
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "config_fingerprint": model.config.fingerprint(),
        "schema": None if model.schema is None else model.schema.to_dict(),
        "preprocessing": None if model.preprocessor is None else model.preprocessor.to_dict(),
        "data_columns": dict(sorted(model.data_columns.items())),
        "feature_names": names,
        "group_labels": list(model.group_labels),
        "membership": None if model.membership is None else membership_to_dict(model.membership),
        "groups": {g: tree_sum_to_dict(m, names) for g, m in sorted(model.models.items())},
    }


def model_from_dict(d: Mapping) -> GFigsModel:
    try:
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFileError(f"unsupported model format version {d.get('format_version')!r}")
        names = tuple(d["feature_names"])
        schema = None if d.get("schema") is None else FeatureSchema.from_json(d["schema"])
        pre = None
        if d.get("preprocessing") is not None:
            if schema is None:
                raise ModelFileError("preprocessing statistics without a schema")
            pre = Preprocessor.from_dict(schema, d["preprocessing"])
        return GFigsModel(
            models={g: tree_sum_from_dict(m, names) for g, m in d["groups"].items()},
            config=PipelineConfig.from_dict(d["config"]),
            feature_names=names,
            group_labels=tuple(d.get("group_labels", ())),
            membership=None if d.get("membership") is None else membership_from_dict(d["membership"]),
            schema=schema,
            preprocessor=pre,
            data_columns=dict(d.get("data_columns", {})),
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise ModelFileError(f"corrupt model file: {e!r}") from None


def dumps(model: GFigsModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, allow_nan=False) + "\n"


def loads(text: str) -> GFigsModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"model file is not valid JSON: {e}") from None
    if not isinstance(d, Mapping):
        raise ModelFileError("model file must hold a JSON object")
    return model_from_dict(d)


def save_model(model: GFigsModel, path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load_model(path) -> GFigsModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ModelFileError(f"cannot read model file {path}: {e}") from None
    return loads(text)
