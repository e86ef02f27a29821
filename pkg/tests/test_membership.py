from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gfigs.errors import ConfigError, SchemaError
from gfigs.membership import (
    LogisticModel,
    MembershipSpec,
    fit_gbt,
    fit_logistic,
    fit_membership,
    logistic_gradient,
    logistic_objective,
    predict_membership,
    sigmoid,
)
from gfigs.tabular import Column, Dataset, FeatureSchema


def random_instance(seed, n=None, p=None):
    r = np.random.default_rng(seed)
    n = n or int(r.integers(5, 30))
    p = p or int(r.integers(1, 5))
    Z = r.normal(size=(n, p))
    y = (r.random(n) < 0.5).astype(float)
    params = r.normal(size=p + 1)
    return Z, y, params, float(r.uniform(0.05, 5.0))


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestLogistic:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        Z, y, params, C = random_instance(seed)
        analytic = logistic_gradient(params, Z, y, C)
        numeric = central_difference(lambda b: logistic_objective(b, Z, y, C), params)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
        assert rel <= 1e-5

    def test_matches_sklearn_on_standardized_data(self, rng):
        from sklearn.linear_model import LogisticRegression

        X = rng.normal(size=(300, 3)) * [1.0, 5.0, 0.2] + [0.0, 3.0, -1.0]
        y = (rng.random(300) < sigmoid(X @ [1.0, -0.3, 2.0])).astype(int)
        m = fit_logistic(X, y, C=0.7)
        ref = LogisticRegression(C=0.7, tol=1e-12, max_iter=10_000).fit(m.standardize(X), y)
        assert np.allclose(m.coefficients, ref.coef_[0], atol=1e-6)
        assert m.intercept == pytest.approx(ref.intercept_[0], abs=1e-6)
        assert m.converged

    def test_no_signal_gives_base_rate(self, rng):
        X = rng.normal(size=(4000, 3))
        y = (rng.random(4000) < 0.3).astype(int)
        m = fit_logistic(X, y, C=1e-4)
        assert np.all(np.abs(m.coefficients) < 0.01)
        assert np.all(np.abs(fit_logistic(X, y, C=1.0).coefficients) < 0.1)
        assert m.intercept == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=0.01)

    def test_separable_data_stays_finite(self):
        x = np.linspace(-1, 1, 40)[:, None]
        y = (x[:, 0] > 0).astype(int)
        m = fit_logistic(x, y, C=1.0)
        assert np.isfinite(m.coefficients).all() and m.coefficients[0] > 0

    def test_zero_variance_columns_dropped(self, rng):
        X = np.column_stack([rng.normal(size=50), np.full(50, 3.0), rng.normal(size=50)])
        y = (X[:, 0] > 0).astype(int)
        m = fit_logistic(X, y)
        assert m.dropped == (1,)
        assert m.retained.tolist() == [0, 2]
        assert np.all(m.scale > 0)
        assert m.predict_proba(X).shape == (50,)

    def test_standardization_round_trip(self, rng):
        X = rng.normal(size=(200, 4)) * 3 + 1
        y = (X[:, 0] - X[:, 2] + rng.normal(size=200) > 0).astype(int)
        m = fit_logistic(X, y, C=2.0)
        beta, b = m.raw_coefficients()
        assert np.allclose(X @ beta + b, m.decision_function(X), atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_warm_start_with_weaker_penalty(self, seed):
        r = np.random.default_rng(seed)
        X = r.normal(size=(120, 3))
        y = (X[:, 0] + r.normal(size=120) > 0).astype(int)
        small = fit_logistic(X, y, C=0.1)
        start = np.r_[small.intercept, small.coefficients]
        big = fit_logistic(X, y, C=2.8, init=start)
        Z = small.standardize(X)
        after = logistic_objective(np.r_[big.intercept, big.coefficients], Z, y, 2.8)
        assert after <= logistic_objective(start, Z, y, 2.8) + 1e-6

    def test_deterministic(self, rng):
        X = rng.normal(size=(100, 3))
        y = (X[:, 1] > 0).astype(int)
        a, b = fit_logistic(X, y), fit_logistic(X, y)
        assert np.array_equal(a.coefficients, b.coefficients) and a.intercept == b.intercept

    def test_known_coefficients(self):
        m = LogisticModel(np.array([1.0]), 0.0, 1.0, np.array([0.0]), np.array([1.0]),
                          np.array([0]), 1)
        assert m.predict_proba(np.array([[0.0]]))[0] == 0.5

    def test_zero_coefficients_at_mean_give_base_rate(self):
        base = 0.2
        m = LogisticModel(np.zeros(2), float(np.log(base / (1 - base))), 1.0, np.array([1.0, 2.0]),
                          np.array([1.0, 1.0]), np.array([0, 1]), 2)
        assert m.predict_proba(np.array([[1.0, 2.0]]))[0] == pytest.approx(base)

    def test_nonpositive_c(self):
        with pytest.raises(ConfigError):
            fit_logistic(np.zeros((4, 1)), [0, 1, 0, 1], C=0.0)


class TestBoosting:
    def test_one_stage_on_perfect_feature(self):
        x = np.array([[0.0]] * 10 + [[1.0]] * 10)
        y = np.array([0] * 10 + [1] * 10)
        m = fit_gbt(x, y, n_trees=1, max_depth=1, learning_rate=1.0)
        p = m.predict_proba(np.array([[0.0], [1.0]]))
        assert p[1] - p[0] > 0.5
        # one Newton step from the base rate: leaf value sum(g)/sum(h) = +-2
        assert p[1] == pytest.approx(sigmoid(2.0))

    def test_zero_stages_rejected(self):
        with pytest.raises(ConfigError):
            fit_gbt(np.zeros((4, 1)), [0, 1, 0, 1], n_trees=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_non_increasing(self, seed):
        r = np.random.default_rng(seed)
        X = r.normal(size=(150, 3))
        y = (X[:, 0] * X[:, 1] + 0.5 * r.normal(size=150) > 0).astype(int)
        h = fit_gbt(X, y, n_trees=30).loss_history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_identical_features_predict_base_rate(self):
        y = np.array([0, 1, 1, 0, 1, 0, 0, 0])
        p = fit_gbt(np.ones((8, 2)), y, n_trees=5).predict_proba(np.ones((3, 2)))
        assert np.allclose(p, y.mean(), atol=1e-12)

    def test_zero_learning_rate(self, rng):
        X = rng.normal(size=(60, 2))
        y = (X[:, 0] > 0).astype(int)
        p = fit_gbt(X, y, n_trees=3, learning_rate=0.0).predict_proba(X)
        assert np.allclose(p, y.mean(), atol=1e-12)

    def test_stage_count(self, rng):
        X = rng.normal(size=(60, 2))
        m = fit_gbt(X, (X[:, 0] > 0).astype(int), n_trees=7)
        assert len(m.trees) <= 7


def group_data(rng, n=300, groups=("a", "b")):
    X = rng.normal(size=(n, 3))
    g = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, groups[1], groups[0])
    if len(groups) > 2:
        g = np.array([groups[int(v)] for v in np.digitize(X[:, 0], [-0.7, 0.0, 0.7])[:n] % len(groups)])
    schema = FeatureSchema((Column("x0"), Column("x1"), Column("age", exclude_from_membership=True)))
    return Dataset(X, (rng.random(n) < 0.5).astype(int), ("x0", "x1", "age"), group=g, schema=schema)


class TestMembershipModel:
    def test_two_groups_share_one_model(self, rng):
        m = fit_membership(group_data(rng))
        assert list(m.models) == ["b"]
        P = m.predict_proba(np.zeros((4, 2)) + 0.3)
        assert np.allclose(P.sum(axis=1), 1.0)
        assert np.all((P > 0) & (P < 1))

    def test_complement(self, rng):
        m = fit_membership(group_data(rng))
        p = predict_membership(m, {"x0": 0.4, "x1": -1.0})
        assert p["a"] == pytest.approx(1 - p["b"])

    def test_excluded_feature_is_dropped(self, rng):
        m = fit_membership(group_data(rng))
        assert m.feature_names == ("x0", "x1") and m.excluded_features == ("age",)
        with pytest.raises(SchemaError):
            predict_membership(m, {"x0": 0.0, "x1": 0.0, "age": 3.0})

    def test_one_vs_rest_for_many_groups(self, rng):
        d = group_data(rng, n=400, groups=("g0", "g1", "g2", "g3"))
        m = fit_membership(d, MembershipSpec("logreg", C=1.0))
        assert sorted(m.models) == ["g0", "g1", "g2", "g3"]
        assert m.predict_proba(d).shape == (400, 4)

    def test_boosted_membership(self, rng):
        d = group_data(rng)
        m = fit_membership(d, MembershipSpec("gbt", n_trees=20))
        p = m.probability(d, "b")
        assert p[d.group == "b"].mean() > p[d.group == "a"].mean()

    def test_spec_keys_and_round_trip(self):
        for spec in (MembershipSpec("logreg", C=2.8), MembershipSpec("gbt", n_trees=50)):
            assert MembershipSpec.from_dict(spec.to_dict()) == spec
        assert MembershipSpec("logreg", C=2.8).key == "LR(C=2.8)"
        assert MembershipSpec.from_dict({"kind": "gbt", "N": 100}).key == "GB(N=100)"
        with pytest.raises(ConfigError):
            MembershipSpec("forest")


@given(st.floats(-800, 800))
def test_sigmoid_stays_finite(z):
    p = float(sigmoid(np.array([z]))[0])
    assert 0.0 <= p <= 1.0 and np.isfinite(p)
