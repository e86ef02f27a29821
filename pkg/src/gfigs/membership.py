"""Group-membership models estimating P(G = g | X).

Two learners are provided, both written against numpy only: L2-regularized
logistic regression fitted by damped Newton (IRLS) on standardized features,
and gradient-boosted regression trees on the logistic loss.  More than two
groups are handled one-vs-rest; with exactly two groups a single binary model
serves both and the probabilities are complements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from gfigs.errors import ConfigError, DegenerateClassError, SchemaError
from gfigs.tabular import Dataset
from gfigs.tree import Tree, fit_cart

_DEN_FLOOR = 1e-12


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss_sum(labels, scores) -> float:
    """Summed logistic loss ``log(1 + e^z) - y z``."""
    z = np.asarray(scores, dtype=float)
    return math.fsum(np.logaddexp(0.0, z) - np.asarray(labels) * z)


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if y.min() == y.max():
        raise DegenerateClassError("membership labels contain a single class")
    return y.astype(float)


# ---------------------------------------------------------------- logistic

def logistic_objective(params, Z, y, C) -> float:
    """``||beta||^2 / (2C) + sum logloss``; ``params = [intercept, *beta]``."""
    b, beta = params[0], params[1:]
    return 0.5 * float(beta @ beta) / C + log_loss_sum(y, Z @ beta + b)


def logistic_gradient(params, Z, y, C) -> np.ndarray:
    b, beta = params[0], params[1:]
    resid = sigmoid(Z @ beta + b) - y
    return np.concatenate([[resid.sum()], Z.T @ resid + beta / C])


def _logistic_hessian(params, Z, C):
    b, beta = params[0], params[1:]
    p = sigmoid(Z @ beta + b)
    d = p * (1 - p)
    A = np.hstack([np.ones((Z.shape[0], 1)), Z])
    H = A.T @ (A * d[:, None])
    H[1:, 1:] += np.eye(Z.shape[1]) / C
    return H


@dataclass(eq=False)
class LogisticModel:
    coefficients: np.ndarray  # on standardized retained features
    intercept: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    retained: np.ndarray  # column indices into the input matrix
    n_inputs: int
    dropped: tuple[int, ...] = ()
    n_iter: int = 0
    converged: bool = True

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_inputs:
            raise SchemaError(f"expected {self.n_inputs} membership features, got {X.shape[1]}")
        return (X[:, self.retained] - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        return self.standardize(X) @ self.coefficients + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def raw_coefficients(self) -> tuple[np.ndarray, float]:
        """Coefficients and intercept on the original (unstandardized) scale."""
        beta = np.zeros(self.n_inputs)
        beta[self.retained] = self.coefficients / self.scale
        b = self.intercept - float(np.sum(self.coefficients * self.mean / self.scale))
        return beta, b

    def to_dict(self) -> dict:
        return {
            "type": "logistic",
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "C": self.C,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "retained": self.retained.tolist(),
            "n_inputs": self.n_inputs,
            "dropped": list(self.dropped),
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LogisticModel":
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            intercept=float(d["intercept"]),
            C=float(d["C"]),
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            retained=np.asarray(d["retained"], dtype=np.int64),
            n_inputs=int(d["n_inputs"]),
            dropped=tuple(d.get("dropped", ())),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", True)),
        )


def fit_logistic(X, labels, C: float = 1.0, init: np.ndarray | None = None,
                 tol: float = 1e-8, max_iter: int = 500) -> LogisticModel:
    """L2 logistic regression; the intercept is not penalized.

    Zero-variance columns are dropped (recorded in ``dropped``).  Newton
    steps are halved until the objective stops increasing.  ``init`` warm
    starts from ``[intercept, *beta]`` in standardized space.
    """
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = _check_labels(labels)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    retained = np.flatnonzero(keep)
    Z = (X[:, retained] - mean[retained]) / std[retained]

    if init is None:
        base = y.mean()
        params = np.zeros(len(retained) + 1)
        params[0] = math.log(base / (1 - base))
    else:
        params = np.array(init, dtype=float)
        if params.shape != (len(retained) + 1,):
            raise ValueError("warm start has the wrong length")

    obj = logistic_objective(params, Z, y, C)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = logistic_gradient(params, Z, y, C)
        if np.linalg.norm(g) <= tol:
            converged = True
            it -= 1
            break
        H = _logistic_hessian(params, Z, C)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = params - t * step
            cand_obj = logistic_objective(cand, Z, y, C)
            if cand_obj <= obj or t < 1e-10:
                break
            t *= 0.5
        if cand_obj > obj:
            break
        params, obj = cand, cand_obj
    else:
        converged = np.linalg.norm(logistic_gradient(params, Z, y, C)) <= tol

    return LogisticModel(
        coefficients=params[1:].copy(),
        intercept=float(params[0]),
        C=float(C),
        mean=mean[retained],
        scale=std[retained],
        retained=retained,
        n_inputs=X.shape[1],
        dropped=tuple(int(j) for j in np.flatnonzero(~keep)),
        n_iter=it,
        converged=bool(converged),
    )


# ---------------------------------------------------------------- boosting

@dataclass(eq=False)
class GradientBoostedModel:
    trees: list[Tree]
    n_trees: int
    learning_rate: float
    max_depth: int
    initial_log_odds: float
    n_inputs: int
    loss_history: list[float] = field(default_factory=list, repr=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_inputs:
            raise SchemaError(f"expected {self.n_inputs} membership features, got {X.shape[1]}")
        score = np.full(X.shape[0], self.initial_log_odds)
        for t in self.trees:
            score = score + self.learning_rate * t.predict(X)
        return score

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        from gfigs.serialize import tree_to_dict

        return {
            "type": "gbt",
            "n_trees": self.n_trees,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "initial_log_odds": self.initial_log_odds,
            "n_inputs": self.n_inputs,
            "trees": [tree_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GradientBoostedModel":
        from gfigs.serialize import tree_from_dict

        return cls(
            trees=[tree_from_dict(t) for t in d["trees"]],
            n_trees=int(d["n_trees"]),
            learning_rate=float(d["learning_rate"]),
            max_depth=int(d["max_depth"]),
            initial_log_odds=float(d["initial_log_odds"]),
            n_inputs=int(d["n_inputs"]),
        )


def fit_gbt(X, labels, n_trees: int = 100, max_depth: int = 3,
            learning_rate: float = 0.1) -> GradientBoostedModel:
    """Stagewise boosting of the logistic loss with one Newton step per leaf."""
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    if max_depth < 1:
        raise ConfigError("max_depth must be >= 1")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = _check_labels(labels)
    base = y.mean()
    f0 = math.log(base / (1 - base))
    score = np.full(len(y), f0)
    history = [log_loss_sum(y, score)]
    trees = []
    for _ in range(n_trees):
        p = sigmoid(score)
        grad = y - p
        tree = fit_cart(X, grad, None, max_splits=2 ** max_depth - 1, max_depth=max_depth)
        leaf_of = tree.apply(X)
        hess = p * (1 - p)
        for leaf in tree.leaves():
            rows = leaf_of == leaf
            den = math.fsum(hess[rows])
            tree.value[leaf] = math.fsum(grad[rows]) / den if den > _DEN_FLOOR else 0.0
        trees.append(tree)
        score = score + learning_rate * tree.predict(X)
        history.append(log_loss_sum(y, score))
    return GradientBoostedModel(trees, n_trees, float(learning_rate), max_depth, f0,
                                X.shape[1], history)


# ---------------------------------------------------------------- groups

@dataclass(frozen=True)
class MembershipSpec:
    kind: str = "logreg"
    C: float = 1.0
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.kind not in ("logreg", "gbt"):
            raise ConfigError(f"unknown membership model {self.kind!r}; expected logreg or gbt")
        if self.kind == "logreg" and not self.C > 0:
            raise ConfigError("C must be positive")
        if self.kind == "gbt" and self.n_trees < 1:
            raise ConfigError("N must be >= 1")

    @property
    def key(self) -> str:
        if self.kind == "logreg":
            return f"LR(C={self.C:g})"
        return f"GB(N={self.n_trees})"

    def to_dict(self) -> dict:
        if self.kind == "logreg":
            return {"kind": "logreg", "C": self.C}
        return {"kind": "gbt", "n_trees": self.n_trees, "max_depth": self.max_depth,
                "learning_rate": self.learning_rate}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MembershipSpec":
        d = dict(d)
        if "N" in d:
            d["n_trees"] = d.pop("N")
        unknown = set(d) - {"kind", "C", "n_trees", "max_depth", "learning_rate"}
        if unknown:
            raise ConfigError(f"unknown membership keys {sorted(unknown)}")
        return cls(**d)

    def fit(self, X, labels):
        if self.kind == "logreg":
            return fit_logistic(X, labels, C=self.C)
        return fit_gbt(X, labels, self.n_trees, self.max_depth, self.learning_rate)


# Both a weaker and a stronger regularized setting of each learner.
DEFAULT_MEMBERSHIP_GRID = (
    MembershipSpec("logreg", C=2.8),
    MembershipSpec("logreg", C=0.1),
    MembershipSpec("gbt", n_trees=100),
    MembershipSpec("gbt", n_trees=50),
)


@dataclass(eq=False)
class MembershipModel:
    """One-vs-rest membership probabilities over ``groups`` (sorted labels).

    For two groups ``models`` holds a single entry, keyed by the second
    label, and the first label receives the complement.  For more groups the
    one-vs-rest probabilities are not normalized.
    """

    groups: tuple[str, ...]
    models: dict
    feature_names: tuple[str, ...]
    excluded_features: tuple[str, ...] = ()
    spec: MembershipSpec = field(default_factory=MembershipSpec)

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, Dataset):
            idx = {n: j for j, n in enumerate(X.feature_names)}
            missing = [n for n in self.feature_names if n not in idx]
            if missing:
                raise SchemaError(f"membership features missing from data: {missing}")
            return X.X[:, [idx[n] for n in self.feature_names]]
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise SchemaError(
                f"membership model expects {len(self.feature_names)} features, got {X.shape[1]}"
            )
        return X

    def predict_proba(self, X) -> np.ndarray:
        """(rows, groups) probability matrix, columns in ``groups`` order."""
        M = self._matrix(X)
        if len(self.groups) == 2:
            p = self.models[self.groups[1]].predict_proba(M)
            return np.column_stack([1.0 - p, p])
        return np.column_stack([self.models[g].predict_proba(M) for g in self.groups])

    def probability(self, X, group: str) -> np.ndarray:
        if group not in self.groups:
            raise SchemaError(f"unknown group {group!r}")
        return self.predict_proba(X)[:, self.groups.index(group)]


def fit_membership(data: Dataset, spec: MembershipSpec = MembershipSpec(),
                   drop_excluded: bool = True) -> MembershipModel:
    """Fit on ``data`` (which must carry group labels).

    Columns flagged ``exclude_from_membership`` in the schema are removed
    first unless ``drop_excluded`` is off.
    """
    if data.group is None:
        raise SchemaError("membership model needs group labels")
    groups = tuple(data.groups)
    if len(groups) < 2:
        raise DegenerateClassError("membership model needs at least two groups")
    view = data.membership_view() if drop_excluded else data
    excluded = tuple(n for n in data.feature_names if n not in view.feature_names)
    targets = groups[1:] if len(groups) == 2 else groups
    models = {g: spec.fit(view.X, (view.group == g).astype(int)) for g in targets}
    return MembershipModel(groups, models, tuple(view.feature_names), excluded, spec)


def predict_membership(model: MembershipModel, x) -> dict[str, float]:
    """Per-group probabilities for a single row.

    ``x`` is a sequence ordered like ``model.feature_names`` or a mapping from
    feature name to value; a mapping that mentions an excluded feature is
    rejected.
    """
    if isinstance(x, Mapping):
        bad = [k for k in x if k in model.excluded_features]
        if bad:
            raise SchemaError(f"features excluded from membership were supplied: {bad}")
        try:
            x = [x[n] for n in model.feature_names]
        except KeyError as e:
            raise SchemaError(f"missing membership feature {e.args[0]!r}") from None
    p = model.predict_proba(np.asarray(x, dtype=float))[0]
    return {g: float(v) for g, v in zip(model.groups, p)}
