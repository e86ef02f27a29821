"""Instance-weighted binary regression trees grown under a total split budget.

Split quality is the weighted squared-error decrease

    W * imp(parent) - W_L * imp(left) - W_R * imp(right)

which equals ``W_L * W_R / W * (mean_L - mean_R) ** 2``; the second form is
used because it cannot go negative through cancellation.  Candidate scans are
vectorized with cumulative sums, and the few candidates that come within a
hair of the best are re-scored with ``math.fsum`` so the winner does not depend
on summation order.  Two features that induce the same partition therefore
tie exactly and the tie-break (lowest feature, then lowest threshold) decides.

Rows with zero weight take no part in fitting at all, so zeroing a weight is
the same as deleting the row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from gfigs.errors import DegenerateWeightError, SchemaError

MIN_CHILD_WEIGHT = 1e-12
# relative window inside which vectorized scores are re-checked exactly
_RESCORE_WINDOW = 1e-9
LEAF = -1


class Split(NamedTuple):
    feature: int
    threshold: float
    decrease: float


def weighted_impurity(targets, weights) -> float:
    """Weighted variance ``sum w (t - mean_w)^2 / sum w``."""
    t = np.asarray(targets, dtype=float)
    w = np.asarray(weights, dtype=float)
    if t.shape != w.shape:
        raise ValueError("targets and weights must have the same length")
    W = math.fsum(w)
    if not W > 0:
        raise DegenerateWeightError("total weight must be positive")
    ref = t[np.argmax(w > 0)]
    d = t - ref
    mean = math.fsum(w * d) / W
    return math.fsum(w * (d - mean) ** 2) / W


def _midpoint(a: float, b: float) -> float:
    m = (a + b) / 2.0
    # adjacent floats: the midpoint may round onto b, which must route right
    return a if m >= b else m


def _exact_decrease(xcol, t, w, threshold):
    """Order-independent score of one candidate; None if a child is too light."""
    left = xcol <= threshold
    wl, wr = w[left], w[~left]
    WL, WR = math.fsum(wl), math.fsum(wr)
    if WL < MIN_CHILD_WEIGHT or WR < MIN_CHILD_WEIGHT:
        return None
    ml = math.fsum(wl * t[left]) / WL
    mr = math.fsum(wr * t[~left]) / WR
    return WL * WR / (WL + WR) * (ml - mr) ** 2


def best_split(X, targets, weights, rows=None, min_decrease: float = 0.0) -> Split | None:
    """Best threshold split of ``rows`` (default: all rows), or None.

    Candidate thresholds are midpoints between consecutive distinct values of
    the positive-weight rows.  None is returned when no candidate improves on
    ``min_decrease``.
    """
    X = np.asarray(X, dtype=float)
    t_all = np.asarray(targets, dtype=float)
    w_all = np.asarray(weights, dtype=float)
    if rows is None:
        rows = np.arange(X.shape[0])
    rows = np.asarray(rows)
    rows = rows[w_all[rows] > 0]
    if len(rows) == 0:
        raise DegenerateWeightError("leaf has no positive-weight rows")
    if len(rows) < 2:
        return None
    Xl = X[rows]
    w = w_all[rows]
    # shift by one observed target so a constant leaf scores exactly zero
    t = t_all[rows] - t_all[rows[0]]
    W = w.sum()
    S = (w * t).sum()

    scored = []  # (approx decrease, feature, threshold)
    for f in range(Xl.shape[1]):
        order = np.argsort(Xl[:, f], kind="stable")
        xs = Xl[order, f]
        cuts = np.flatnonzero(xs[:-1] < xs[1:])
        if len(cuts) == 0:
            continue
        cw = np.cumsum(w[order])[cuts]
        cs = np.cumsum(w[order] * t[order])[cuts]
        wr = W - cw
        ok = (cw >= MIN_CHILD_WEIGHT) & (wr >= MIN_CHILD_WEIGHT)
        if not ok.any():
            continue
        cuts, cw, cs, wr = cuts[ok], cw[ok], cs[ok], wr[ok]
        dec = cw * wr / W * (cs / cw - (S - cs) / wr) ** 2
        k = int(np.argmax(dec))
        top = dec[k]
        if not top > 0:
            continue
        near = np.flatnonzero(dec >= top * (1 - _RESCORE_WINDOW))
        for i in near:
            scored.append((dec[i], f, _midpoint(xs[cuts[i]], xs[cuts[i] + 1])))
    if not scored:
        return None
    best_approx = max(s[0] for s in scored)
    best = None
    for approx, f, thr in scored:
        if approx < best_approx * (1 - _RESCORE_WINDOW):
            continue
        dec = _exact_decrease(Xl[:, f], t, w, thr)
        if dec is None:
            continue
        if best is None or dec > best.decrease or (
            dec == best.decrease and (f, thr) < (best.feature, best.threshold)
        ):
            best = Split(f, float(thr), dec)
    if best is None or not best.decrease > min_decrease:
        return None
    return best


def leaf_stats(targets, weights) -> tuple[float, float, int]:
    """(weighted mean, weight sum, count) over positive-weight rows."""
    w = np.asarray(weights, dtype=float)
    t = np.asarray(targets, dtype=float)
    pos = w > 0
    W = math.fsum(w[pos])
    if not W > 0:
        raise DegenerateWeightError("leaf has no positive weight")
    tp, wp = t[pos], w[pos]
    # shifting by a member value makes the mean of a constant leaf exact
    ref = tp[0]
    return ref + math.fsum(wp * (tp - ref)) / W, W, int(pos.sum())


@dataclass(eq=False)
class Tree:
    """Array-of-nodes binary tree; ``feature[i] == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.  ``value`` of a leaf is
    its additive risk contribution.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    weight_sum: list[float] = field(default_factory=list)
    n: list[int] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)

    @classmethod
    def single_leaf(cls, value: float, weight_sum: float = 0.0, n: int = 0) -> "Tree":
        t = cls()
        t._add_leaf(value, weight_sum, n, 0)
        return t

    def _add_leaf(self, value, weight_sum, n, depth) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        self.weight_sum.append(float(weight_sum))
        self.n.append(int(n))
        self.depth.append(depth)
        return len(self.feature) - 1

    def split_leaf(self, node: int, feature: int, threshold: float,
                   left_stats: tuple, right_stats: tuple) -> tuple[int, int]:
        if self.feature[node] != LEAF:
            raise ValueError(f"node {node} is not a leaf")
        d = self.depth[node] + 1
        lo = self._add_leaf(*left_stats, d)
        hi = self._add_leaf(*right_stats, d)
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.left[node], self.right[node] = lo, hi
        self.value[node] = 0.0
        return lo, hi

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def split_count(self) -> int:
        return sum(1 for f in self.feature if f != LEAF)

    def leaves(self) -> list[int]:
        return [i for i, f in enumerate(self.feature) if f == LEAF]

    def max_feature(self) -> int:
        return max((f for f in self.feature if f != LEAF), default=-1)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.max_feature() >= X.shape[1]:
            raise SchemaError(
                f"tree uses feature {self.max_feature()} but rows have {X.shape[1]} features"
            )
        node = np.zeros(X.shape[0], dtype=np.int64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        lo = np.asarray(self.left)
        hi = np.asarray(self.right)
        active = feat[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, feat[nd]] <= thr[nd]
            node[idx] = np.where(go_left, lo[nd], hi[nd])
            active = feat[node] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.value)[self.apply(X)]

    def structure(self) -> tuple:
        """Hashable summary used for structural equality checks."""
        return tuple(
            (f, self.threshold[i], self.left[i], self.right[i]) if f != LEAF
            else (LEAF, self.value[i], self.weight_sum[i], self.n[i])
            for i, f in enumerate(self.feature)
        )

    def __eq__(self, other):
        return isinstance(other, Tree) and self.structure() == other.structure()

    __hash__ = None


def predict_tree(tree: Tree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=float)[None, :])[0])


def fit_cart(X, targets, weights=None, max_splits: int = 1, max_depth: int | None = None,
             rel_tol: float = 1e-12) -> Tree:
    """Grow one tree best-first until ``max_splits`` splits or no gain remains.

    At each step the leaf whose best split has the largest decrease is split;
    ties go to the earliest-created leaf.  Decreases at or below
    ``rel_tol * sum(w * t**2)`` count as zero.
    """
    if max_splits is None or max_splits < 1:
        raise ValueError("max_splits must be >= 1")
    X = np.asarray(X, dtype=float)
    t = np.asarray(targets, dtype=float)
    w = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=float)
    pos = w > 0
    if not pos.any():
        raise DegenerateWeightError("no positive weights")
    X, t, w = X[pos], t[pos], w[pos]
    floor = rel_tol * math.fsum(w * t * t)

    tree = Tree()
    tree._add_leaf(*leaf_stats(t, w), 0)
    members = {0: np.arange(len(t))}
    pending: dict[int, Split | None] = {}

    def candidate(node):
        if max_depth is not None and tree.depth[node] >= max_depth:
            return None
        return best_split(X, t, w, members[node], min_decrease=floor)

    while tree.split_count < max_splits:
        for node in members:
            if node not in pending:
                pending[node] = candidate(node)
        best_node = None
        for node in sorted(pending):
            c = pending[node]
            if c is not None and (best_node is None or c.decrease > pending[best_node].decrease):
                best_node = node
        if best_node is None:
            break
        sp = pending.pop(best_node)
        rows = members.pop(best_node)
        go_left = X[rows, sp.feature] <= sp.threshold
        lr, rr = rows[go_left], rows[~go_left]
        lo, hi = tree.split_leaf(best_node, sp.feature, sp.threshold,
                                 leaf_stats(t[lr], w[lr]), leaf_stats(t[rr], w[rr]))
        members[lo], members[hi] = lr, rr
    return tree
