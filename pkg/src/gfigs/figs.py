"""FIGS: a greedily grown sum of trees, each fitting the others' residuals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gfigs.errors import DegenerateWeightError, SchemaError
from gfigs.tree import Split, Tree, best_split, leaf_stats


@dataclass(eq=False)
class TreeSumModel:
    """Additive tree ensemble; probability is the clamped sum of leaf values.

    ``intercept`` is nonzero only for a model with no trees, where it holds
    the weighted outcome mean.  Once a tree exists its leaves absorb the mean.
    """

    trees: list[Tree] = field(default_factory=list)
    intercept: float = 0.0
    max_splits: int | None = None
    n_features: int | None = None
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def total_splits(self) -> int:
        return sum(t.split_count for t in self.trees)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_raw(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.full(X.shape[0], self.intercept)
        for t in self.trees:
            out = out + t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.predict_raw(X), 0.0, 1.0)

    def structure(self) -> tuple:
        return (self.intercept, tuple(t.structure() for t in self.trees))

    def __eq__(self, other):
        return isinstance(other, TreeSumModel) and self.structure() == other.structure()

    __hash__ = None


def predict_proba(model: TreeSumModel, x) -> float | np.ndarray:
    """Probability for one row (scalar) or a matrix of rows (vector)."""
    x = np.asarray(x, dtype=float)
    p = model.predict_proba(x)
    return float(p[0]) if x.ndim == 1 else p


def _others(preds: list[np.ndarray], skip: int, n: int) -> np.ndarray:
    # fixed summation order keeps residuals bitwise reproducible
    acc = np.zeros(n)
    for j, p in enumerate(preds):
        if j != skip:
            acc = acc + p
    return acc


def _weighted_sse(y, pred, w) -> float:
    return math.fsum(w * (y - pred) ** 2)


def fit_figs(X, y, weights=None, max_splits: int = 8, rel_tol: float = 1e-12) -> TreeSumModel:
    """Fit a tree sum with at most ``max_splits`` splits in total.

    Every iteration scores two kinds of candidates: splitting any leaf of any
    existing tree against that tree's residual (``y`` minus every other
    tree), and starting a new stump on the full-ensemble residual.  The
    candidate with the largest weighted decrease is applied (ties: earlier
    tree, earlier leaf, new stump last), then each tree's leaves are refit in
    tree order to the weighted mean of its current residual.
    """
    if max_splits is None or max_splits < 1:
        raise ValueError("max_splits must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise DegenerateWeightError("weights must be nonnegative")
    pos = w > 0
    if not pos.any():
        raise DegenerateWeightError("no positive weights")
    n_features = X.shape[1]
    X, y, w = X[pos], y[pos], w[pos]
    n = len(y)
    floor = rel_tol * math.fsum(w * y * y)
    mean_y = leaf_stats(y, w)[0]

    trees: list[Tree] = []
    members: list[dict[int, np.ndarray]] = []
    preds: list[np.ndarray] = []
    history = [_weighted_sse(y, np.full(n, mean_y), w)]

    while sum(t.split_count for t in trees) < max_splits:
        best: tuple[Split, int, int, np.ndarray] | None = None
        for k, tree in enumerate(trees):
            r = y - _others(preds, k, n)
            for node in sorted(members[k]):
                sp = best_split(X, r, w, members[k][node], min_decrease=floor)
                if sp is not None and (best is None or sp.decrease > best[0].decrease):
                    best = (sp, k, node, r)
        r = y - _others(preds, -1, n)
        sp = best_split(X, r, w, None, min_decrease=floor)
        if sp is not None and (best is None or sp.decrease > best[0].decrease):
            best = (sp, len(trees), 0, r)
        if best is None:
            break

        sp, k, node, r = best
        if k == len(trees):
            trees.append(Tree.single_leaf(*leaf_stats(r, w)))
            members.append({0: np.arange(n)})
            preds.append(np.zeros(n))
        rows = members[k].pop(node)
        go_left = X[rows, sp.feature] <= sp.threshold
        lr, rr = rows[go_left], rows[~go_left]
        lo, hi = trees[k].split_leaf(node, sp.feature, sp.threshold,
                                     leaf_stats(r[lr], w[lr]), leaf_stats(r[rr], w[rr]))
        members[k][lo], members[k][hi] = lr, rr

        for j, tree in enumerate(trees):
            rj = y - _others(preds, j, n)
            pj = np.zeros(n)
            for leaf, lrows in members[j].items():
                v, ws, cnt = leaf_stats(rj[lrows], w[lrows])
                tree.value[leaf], tree.weight_sum[leaf], tree.n[leaf] = v, ws, cnt
                pj[lrows] = v
            preds[j] = pj
        history.append(_weighted_sse(y, _others(preds, -1, n), w))

    return TreeSumModel(
        trees=trees,
        intercept=0.0 if trees else mean_y,
        max_splits=max_splits,
        n_features=n_features,
        loss_history=history,
    )
