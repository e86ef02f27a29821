"""Two-stage G-FIGS / G-CART pipeline and its pooled and separate baselines.

Stage one fits a membership model P(G=g|X).  Stage two fits one outcome
model per group on *all* training rows, weighting row ``i`` by
``class_weight[y_i] * P(G=g | x_i)``.  The ``separate`` variant is the same
fit restricted to the group's own rows; ``pooled`` fits one model and ignores
the group label.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from gfigs.errors import ConfigError, DegenerateClassError, RoutingError, SchemaError
from gfigs.figs import TreeSumModel, fit_figs
from gfigs.membership import MembershipModel, MembershipSpec, fit_membership
from gfigs.tabular import Dataset, FeatureSchema, Preprocessor, class_weights
from gfigs.tree import fit_cart

VARIANTS = ("pooled", "separate", "group-weighted")
LEARNERS = ("figs", "cart")
POOLED_KEY = "*"
_VARIANT_ALIASES = {"sep": "separate", "gw": "group-weighted", "g": "group-weighted"}


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    outcome_learner: str = "figs"
    variant: str = "group-weighted"
    max_splits: int | Mapping[str, int] = 8
    membership: MembershipSpec | None = None
    class_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        variant = _VARIANT_ALIASES.get(self.variant, self.variant)
        object.__setattr__(self, "variant", variant)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.outcome_learner not in LEARNERS:
            raise ConfigError(f"unknown learner {self.outcome_learner!r}; expected figs or cart")
        if (self.membership is not None) != (variant == "group-weighted"):
            raise ConfigError("a membership spec is required for, and only for, group-weighted")
        budgets = self.max_splits.values() if isinstance(self.max_splits, Mapping) else [self.max_splits]
        for k in budgets:
            if not isinstance(k, (int, np.integer)) or k < 1:
                raise ConfigError(f"max_splits must be a positive integer, got {k!r}")
        if isinstance(self.max_splits, Mapping):
            object.__setattr__(self, "max_splits", {str(g): int(k) for g, k in self.max_splits.items()})

    def splits_for(self, group: str) -> int:
        if isinstance(self.max_splits, Mapping):
            try:
                return self.max_splits[group]
            except KeyError:
                raise ConfigError(f"no max_splits configured for group {group!r}") from None
        return int(self.max_splits)

    @property
    def method_name(self) -> str:
        base = self.outcome_learner.upper()
        return {"pooled": base, "separate": f"{base}-SEP", "group-weighted": f"G-{base}"}[self.variant]

    def to_dict(self) -> dict:
        return {
            "outcome_learner": self.outcome_learner,
            "variant": self.variant,
            "max_splits": dict(sorted(self.max_splits.items())) if isinstance(self.max_splits, Mapping)
            else int(self.max_splits),
            "membership": None if self.membership is None else self.membership.to_dict(),
            "class_weighting": bool(self.class_weighting),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {"outcome_learner", "variant", "max_splits", "membership",
                            "class_weighting", "seed"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        m = d.get("membership")
        if m is not None and not isinstance(m, MembershipSpec):
            d["membership"] = MembershipSpec.from_dict(m)
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(eq=False)
class GFigsModel:
    models: dict[str, TreeSumModel]
    config: PipelineConfig
    feature_names: tuple[str, ...]
    group_labels: tuple[str, ...] = ()
    membership: MembershipModel | None = None
    schema: FeatureSchema | None = None
    preprocessor: Preprocessor | None = field(default=None, repr=False)
    # CSV column names (outcome, group) the model was trained with
    data_columns: dict[str, str | None] = field(default_factory=dict)

    @property
    def pooled(self) -> bool:
        return self.config.variant == "pooled"

    def model_for(self, group) -> TreeSumModel:
        if self.pooled:
            return self.models[POOLED_KEY]
        try:
            return self.models[str(group)]
        except KeyError:
            raise RoutingError(f"unknown group label {group!r}; model has {sorted(self.models)}") from None

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, Dataset):
            if tuple(X.feature_names) != tuple(self.feature_names):
                raise SchemaError("dataset features do not match the model's features")
            return X.X
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise SchemaError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        return X

    def predict(self, X, groups=None) -> np.ndarray:
        """Probabilities for every row, each routed to its group's model."""
        if isinstance(X, Dataset) and groups is None:
            groups = X.group
        M = self._matrix(X)
        if self.pooled:
            return self.models[POOLED_KEY].predict_proba(M)
        if groups is None:
            raise RoutingError("group labels are required to route predictions")
        groups = np.asarray([str(g) for g in groups], dtype=object)
        if len(groups) != M.shape[0]:
            raise RoutingError("one group label per row is required")
        out = np.empty(M.shape[0])
        for g in sorted(set(groups.tolist())):
            rows = groups == g
            out[rows] = self.model_for(g).predict_proba(M[rows])
        return out

    def total_splits(self) -> dict[str, int]:
        return {g: m.total_splits for g, m in sorted(self.models.items())}


def _row_class_weights(y, class_w: Mapping[int, float]) -> np.ndarray:
    y = np.asarray(y)
    return np.where(y == 1, class_w[1], class_w[0]).astype(float)


def compute_instance_weights(train: Dataset, membership: MembershipModel, group: str,
                             class_w: Mapping[int, float], membership_data: Dataset | None = None,
                             ) -> np.ndarray:
    """``class_w[y_i] * P(G=group | x_i)`` for every training row.

    Any base weights carried by ``train`` multiply in as well.  The
    membership features are read from ``membership_data`` when given (it
    must be row-aligned with ``train``), otherwise from ``train`` itself.
    """
    src = train if membership_data is None else membership_data
    if src.n_rows != train.n_rows:
        raise SchemaError("membership data is not row-aligned with the training data")
    p = membership.probability(src, str(group))
    return _row_class_weights(train.y, class_w) * train.weights * p


def _fit_outcome(learner: str, X, y, w, max_splits: int) -> TreeSumModel:
    if learner == "figs":
        return fit_figs(X, y, w, max_splits)
    tree = fit_cart(X, y, w, max_splits)
    if tree.split_count == 0:
        return TreeSumModel([], tree.value[0], max_splits, X.shape[1])
    return TreeSumModel([tree], 0.0, max_splits, X.shape[1])


def fit_pipeline(train: Dataset, cfg: PipelineConfig, membership: MembershipModel | None = None,
                 membership_data: Dataset | None = None,
                 membership_probs: Mapping[str, np.ndarray] | None = None) -> GFigsModel:
    """Fit every per-group outcome model of ``cfg.variant``.

    For the group-weighted variant the membership model is fitted on
    ``membership_data`` (default: ``train``) unless an already fitted
    ``membership`` is passed.  ``membership_probs`` bypasses the model and
    supplies P(G=g|x_i) per group directly.
    """
    class_w = class_weights(train.y) if cfg.class_weighting else {0: 1.0, 1: 1.0}
    base_w = _row_class_weights(train.y, class_w) * train.weights
    models: dict[str, TreeSumModel] = {}
    labels = tuple(train.groups)

    if cfg.variant == "pooled":
        models[POOLED_KEY] = _fit_outcome(cfg.outcome_learner, train.X, train.y, base_w,
                                          cfg.splits_for(POOLED_KEY))
        return GFigsModel(models, cfg, train.feature_names, labels, None, train.schema)

    if train.group is None:
        raise SchemaError(f"variant {cfg.variant!r} needs group labels")
    for g in labels:
        if not np.any(train.y[train.group == g] == 1):
            raise DegenerateClassError(f"group {g!r} has no positive outcomes in the training data")

    if cfg.variant == "separate":
        for g in labels:
            rows = np.flatnonzero(train.group == g)
            models[g] = _fit_outcome(cfg.outcome_learner, train.X[rows], train.y[rows],
                                     base_w[rows], cfg.splits_for(g))
        return GFigsModel(models, cfg, train.feature_names, labels, None, train.schema)

    if membership_probs is None and membership is None:
        membership = fit_membership(membership_data if membership_data is not None else train,
                                    cfg.membership)
    for g in labels:
        if membership_probs is not None:
            p = np.asarray(membership_probs[g], dtype=float)
            w = base_w * p
        else:
            w = compute_instance_weights(train, membership, g, class_w, membership_data)
        if np.any(w < 0) or not np.any(w > 0):
            raise DegenerateClassError(f"group {g!r}: instance weights are all zero")
        models[g] = _fit_outcome(cfg.outcome_learner, train.X, train.y, w, cfg.splits_for(g))
    return GFigsModel(models, cfg, train.feature_names, labels, membership, train.schema)


def predict_pipeline(model: GFigsModel, x, group=None) -> float:
    """Probability for a single row routed by ``group`` (ignored when pooled)."""
    x = np.asarray(x, dtype=float)
    return float(model.predict(x[None, :] if x.ndim == 1 else x,
                               None if model.pooled else [group])[0])
