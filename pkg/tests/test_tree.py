from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gfigs.errors import DegenerateWeightError, SchemaError
from gfigs.tree import LEAF, Tree, best_split, fit_cart, predict_tree, weighted_impurity
from oracles import exact_best_split


def brute_variance(t, w):
    t, w = np.asarray(t, float), np.asarray(w, float)
    keep = w > 0
    m = np.average(t[keep], weights=w[keep])
    return float(np.average((t[keep] - m) ** 2, weights=w[keep]))


def stump(threshold=2.5, left=0.0, right=1.0, feature=0):
    t = Tree.single_leaf(0.5)
    t.split_leaf(0, feature, threshold, (left, 2.0, 2), (right, 2.0, 2))
    return t


@st.composite
def weighted_problem(draw, max_rows=50, max_features=5):
    n = draw(st.integers(2, max_rows))
    p = draw(st.integers(1, max_features))
    X = draw(hnp.arrays(float, (n, p), elements=st.integers(0, 6).map(float)))
    t = draw(hnp.arrays(float, n, elements=st.sampled_from([0.0, 1.0, 0.25, -1.5])))
    w = draw(hnp.arrays(float, n, elements=st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.7])))
    if not np.any(w > 0):
        w[0] = 1.0
    return X, t, w


class TestImpurity:
    def test_half_half(self):
        assert weighted_impurity([0, 0, 1, 1], [1, 1, 1, 1]) == 0.25

    @given(st.floats(-1e6, 1e6), hnp.arrays(float, 3, elements=st.floats(0.1, 10)))
    def test_constant_is_zero(self, c, w):
        assert weighted_impurity([c, c, c], w) == 0.0

    def test_zero_weight_row_ignored(self):
        got = weighted_impurity([0, 1, 1], [1, 0, 1])
        assert got == 0.25 == brute_variance([0, 1, 1], [1, 0, 1])

    @given(weighted_problem())
    def test_matches_weighted_variance(self, prob):
        _, t, w = prob
        assert math.isclose(weighted_impurity(t, w), brute_variance(t, w), rel_tol=1e-9, abs_tol=1e-12)

    def test_zero_total_weight(self):
        with pytest.raises(DegenerateWeightError):
            weighted_impurity([0, 1], [0, 0])


class TestBestSplit:
    def test_four_points(self):
        sp = best_split(np.array([[1.0], [2.0], [3.0], [4.0]]), [0, 0, 1, 1], [1, 1, 1, 1])
        assert (sp.feature, sp.threshold) == (0, 2.5)
        assert sp.decrease == pytest.approx(1.0)

    def test_constant_targets(self):
        assert best_split(np.arange(6.0)[:, None], [0.3] * 6, np.ones(6)) is None

    def test_zero_weight_row_gives_pure_children(self):
        X = np.array([[1.0], [2.0], [3.0]])
        sp = best_split(X, [0, 1, 1], [1, 0, 1])
        assert sp.threshold == 2.0
        assert sp.decrease == pytest.approx(0.5)

    def test_lowest_feature_wins_ties(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        X = np.column_stack([x * 10, x, x])
        sp = best_split(X, [0, 0, 1, 1], np.ones(4))
        assert sp.feature == 0

    def test_lowest_threshold_wins_ties(self):
        # splitting 1|2,3 and 1,2|3 are equally good for targets [0, 0.5, 1]
        sp = best_split(np.array([[1.0], [2.0], [3.0]]), [0.0, 0.5, 1.0], np.ones(3))
        assert sp.threshold == 1.5

    @given(weighted_problem())
    def test_agrees_with_exact_search(self, prob):
        X, t, w = prob
        got = best_split(X, t, w)
        want = exact_best_split(X, t, w)
        if want is None or float(want[2]) <= 1e-300:
            assert got is None or got.decrease < 1e-12
            return
        assert (got.feature, got.threshold) == want[:2]
        assert math.isclose(got.decrease, float(want[2]), rel_tol=1e-9)


class TestFitCart:
    def test_stump_leaves(self):
        tree = fit_cart(np.array([[1.0], [2.0], [3.0], [4.0]]), [0, 0, 1, 1], max_splits=1)
        assert tree.split_count == 1
        assert [tree.value[i] for i in tree.leaves()] == [0.0, 1.0]

    def test_recovers_exact_partition(self):
        g = np.array([(a, b) for a in range(4) for b in range(4)], dtype=float)
        truth = np.where(g[:, 0] <= 1, 0.0, np.where(g[:, 1] <= 2, 0.4, 1.0))
        tree = fit_cart(g, truth, max_splits=3)
        assert np.array_equal(tree.predict(g), truth)
        assert tree.split_count == 2  # stops once every leaf is pure

    def test_stops_early_with_pure_leaves(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        tree = fit_cart(X, [0, 0, 1, 1], max_splits=10)
        assert tree.split_count == 1

    def test_routing(self):
        t = stump()
        assert predict_tree(t, [2.0]) == 0.0
        assert predict_tree(t, [2.5]) == 0.0
        assert predict_tree(t, [3.0]) == 1.0

    def test_feature_out_of_range(self):
        with pytest.raises(SchemaError):
            stump(feature=3).predict(np.zeros((1, 2)))

    @given(weighted_problem(), st.integers(1, 6))
    def test_budget_and_leaf_means(self, prob, k):
        X, t, w = prob
        tree = fit_cart(X, t, w, max_splits=k)
        assert tree.split_count <= k
        leaf = tree.apply(X)
        for i in tree.leaves():
            rows = (leaf == i) & (w > 0)
            if rows.any():
                resid = math.fsum(w[rows] * (t[rows] - tree.value[i]))
                assert abs(resid) <= 1e-9 * max(1.0, math.fsum(w[rows] * np.abs(t[rows])))

    @given(weighted_problem(), st.integers(1, 5), st.sampled_from([0.5, 2.0, 8.0]))
    def test_weight_scaling_keeps_structure(self, prob, k, c):
        X, t, w = prob
        a = fit_cart(X, t, w, max_splits=k)
        b = fit_cart(X, t, w * c, max_splits=k)
        assert [(a.feature[i], a.threshold[i]) for i in range(a.n_nodes)] == \
               [(b.feature[i], b.threshold[i]) for i in range(b.n_nodes)]

    @given(weighted_problem(), st.integers(1, 5))
    def test_zero_weight_equals_deletion(self, prob, k):
        X, t, w = prob
        keep = w > 0
        a = fit_cart(X, t, w, max_splits=k)
        b = fit_cart(X[keep], t[keep], w[keep], max_splits=k)
        assert a == b

    def test_deterministic(self, rng):
        X = rng.normal(size=(200, 4))
        t = (X[:, 0] + rng.normal(size=200) > 0).astype(float)
        assert fit_cart(X, t, max_splits=7) == fit_cart(X, t, max_splits=7)

    def test_max_depth(self, rng):
        X = rng.normal(size=(300, 3))
        t = (X[:, 0] * X[:, 1] > 0).astype(float)
        tree = fit_cart(X, t, max_splits=20, max_depth=2)
        assert max(tree.depth) <= 2

    def test_children_exist_and_acyclic(self, rng):
        X = rng.normal(size=(100, 3))
        tree = fit_cart(X, (X[:, 0] > 0.3).astype(float) + X[:, 1], max_splits=9)
        seen, stack = set(), [0]
        while stack:
            i = stack.pop()
            assert i not in seen
            seen.add(i)
            if tree.feature[i] != LEAF:
                stack += [tree.left[i], tree.right[i]]
        assert seen == set(range(tree.n_nodes))
