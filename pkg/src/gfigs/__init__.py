"""Group-weighted greedy tree sums for heterogeneous tabular data."""
from __future__ import annotations

from gfigs.errors import (
    ConfigError,
    DataError,
    DegenerateClassError,
    DegenerateError,
    GFigsError,
    RoutingError,
    SchemaError,
)
from gfigs.figs import TreeSumModel, fit_figs, predict_proba
from gfigs.membership import MembershipModel, MembershipSpec, fit_membership, predict_membership
from gfigs.metrics import MetricReport, evaluate, spec_at_sens
from gfigs.pipeline import GFigsModel, PipelineConfig, fit_pipeline, predict_pipeline
from gfigs.serialize import load_model, save_model
from gfigs.tabular import Dataset, FeatureSchema, Preprocessor, load_csv
from gfigs.tree import Tree, best_split, fit_cart

__all__ = [
    "ConfigError", "DataError", "DegenerateClassError", "DegenerateError", "GFigsError",
    "RoutingError", "SchemaError", "TreeSumModel", "fit_figs", "predict_proba",
    "MembershipModel", "MembershipSpec", "fit_membership", "predict_membership",
    "MetricReport", "evaluate", "spec_at_sens", "GFigsModel", "PipelineConfig",
    "fit_pipeline", "predict_pipeline", "load_model", "save_model", "Dataset",
    "FeatureSchema", "Preprocessor", "load_csv", "Tree", "best_split", "fit_cart",
]
