from __future__ import annotations

import numpy as np

from gfigs.export import export_ascii, export_json, json_from_groups, parse_json_export, render_tree
from gfigs.figs import TreeSumModel
from gfigs.membership import MembershipSpec
from gfigs.pipeline import PipelineConfig, fit_pipeline
from gfigs.tabular import Dataset
from gfigs.tree import Tree


def data(rng, n=200):
    X = rng.normal(size=(n, 2))
    g = np.where(rng.random(n) < 0.5, "a", "b")
    y = (rng.random(n) < 0.2 + 0.6 * (X[:, 0] > 0)).astype(int)
    return Dataset(X, y, ("age", "gcs"), group=g)


def test_stump_renders_as_three_lines():
    t = Tree.single_leaf(0.0)
    t.split_leaf(0, 1, 14.5, (0.12, 3.0, 3), (0.02, 5.0, 5))
    lines = render_tree(t, ["age", "gcs"])
    assert len(lines) == 3
    assert lines[0] == "gcs <= 14.5"
    assert lines[1].endswith("Δ Risk = +0.1200 (n=3)")
    assert lines[2].endswith("Δ Risk = +0.0200 (n=5)")


def test_negative_leaves_keep_their_sign():
    t = Tree.single_leaf(0.0)
    t.split_leaf(0, 0, 1.0, (-0.05, 1.0, 1), (0.3, 1.0, 1))
    text = "\n".join(render_tree(t, ["ambulance"]))
    assert "Δ Risk = -0.0500" in text and "Δ Risk = +0.3000" in text


def test_nested_tree_rendering(rng):
    m = fit_pipeline(data(rng), PipelineConfig("cart", "separate", 3))
    text = export_ascii(m)
    assert "CART-SEP | group a" in text and "CART-SEP | group b" in text
    assert text.count("Δ Risk") == sum(len(t.leaves()) for tsm in m.models.values() for t in tsm.trees)


def test_json_export_idempotent(rng):
    m = fit_pipeline(data(rng), PipelineConfig("figs", "group-weighted", 6, MembershipSpec()))
    first = export_json(m)
    groups, names, method = parse_json_export(first)
    assert json_from_groups(groups, names, method) == first
    X = rng.normal(size=(50, 2))
    for g, tsm in groups.items():
        assert np.array_equal(tsm.predict_proba(X), m.models[g].predict_proba(X))


def test_constant_model():
    m = TreeSumModel([], 0.25, 4, 2)
    out = json_from_groups({"*": m}, ["a", "b"], "FIGS")
    assert parse_json_export(out)[0]["*"].intercept == 0.25
