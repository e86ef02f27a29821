"""Human-readable renderings of fitted models.

The ASCII form prints each group's trees as nested rules; a row takes the
``yes`` branch when ``feature <= threshold``.  A row's risk is the sum of the
leaf values it reaches, one leaf per tree.  The JSON form holds the same
trees as the model file and can be parsed back with :func:`parse_json_export`.
"""
from __future__ import annotations

import json
from typing import Mapping, Sequence

from gfigs.figs import TreeSumModel
from gfigs.pipeline import POOLED_KEY, GFigsModel
from gfigs.serialize import FORMAT_VERSION, ModelFileError, tree_sum_from_dict, tree_sum_to_dict
from gfigs.tree import LEAF, Tree


def _num(v: float) -> str:
    return f"{v:.6g}"


def _leaf(tree: Tree, i: int) -> str:
    return f"Δ Risk = {tree.value[i]:+.4f} (n={tree.n[i]})"


def _cond(tree: Tree, i: int, names: Sequence[str]) -> str:
    return f"{names[tree.feature[i]]} <= {_num(tree.threshold[i])}"


def render_tree(tree: Tree, feature_names: Sequence[str]) -> list[str]:
    """One tree as text lines.  A stump renders as exactly three lines."""
    if tree.feature[0] == LEAF:
        return [_leaf(tree, 0)]
    lines = [_cond(tree, 0, feature_names)]

    def walk(node: int, prefix: str) -> None:
        kids = [("yes", tree.left[node], False), ("no", tree.right[node], True)]
        for tag, child, last in kids:
            branch = "└─ " if last else "├─ "
            text = _leaf(tree, child) if tree.feature[child] == LEAF else _cond(tree, child, feature_names)
            lines.append(f"{prefix}{branch}{tag}: {text}")
            if tree.feature[child] != LEAF:
                walk(child, prefix + ("   " if last else "│  "))

    walk(0, "")
    return lines


def render_tree_sum(m: TreeSumModel, feature_names: Sequence[str]) -> list[str]:
    if not m.trees:
        return [f"constant risk = {m.intercept:.4f}"]
    lines = []
    for k, tree in enumerate(m.trees):
        if k:
            lines.append("+")
        lines.append(f"tree {k + 1}:")
        lines += ["  " + s for s in render_tree(tree, feature_names)]
    return lines


def export_ascii(model: GFigsModel) -> str:
    blocks = []
    for g, m in sorted(model.models.items()):
        label = "all groups" if g == POOLED_KEY else f"group {g}"
        head = f"{model.config.method_name} | {label} | {m.total_splits} split(s), {len(m.trees)} tree(s)"
        blocks.append("\n".join([head] + render_tree_sum(m, model.feature_names)))
    return "\n\n".join(blocks) + "\n"


def export_json(model: GFigsModel) -> str:
    return json_from_groups(
        {g: m for g, m in model.models.items()}, model.feature_names, model.config.method_name
    )


def json_from_groups(groups: Mapping[str, TreeSumModel], feature_names: Sequence[str],
                     method: str) -> str:
    names = list(feature_names)
    doc = {
        "format_version": FORMAT_VERSION,
        "method": method,
        "feature_names": names,
        "groups": {g: tree_sum_to_dict(m, names) for g, m in sorted(groups.items())},
    }
    return json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def parse_json_export(text: str) -> tuple[dict[str, TreeSumModel], list[str], str]:
    """Inverse of :func:`export_json`: (per-group models, feature names, method)."""
    try:
        doc = json.loads(text)
        names = list(doc["feature_names"])
        groups = {g: tree_sum_from_dict(d, names) for g, d in doc["groups"].items()}
        return groups, names, str(doc["method"])
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
        raise ModelFileError(f"cannot parse exported model: {e!r}") from None
