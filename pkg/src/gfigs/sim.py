"""Synthetic heterogeneous data and the four-cluster benchmark experiment.

The benchmark draws four Gaussian clusters along ``X1`` (centres 0, 2, 4, 6).
The two left clusters label ``Y = X2 > 0`` and the two right ones
``Y = X2 > 2``, so pairs of groups share a rule.  Labels come from the
latent coordinates; the observed ``X1``/``X2`` carry extra Gaussian noise.

:func:`gen_rare_outcome_data` builds a second, clinical-style table (two
age groups, a rare outcome, binary findings with missing values) used to
exercise ingestion, class weighting and selection end to end.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gfigs.errors import ConfigError, GFigsError
from gfigs.membership import MembershipSpec, fit_membership
from gfigs.metrics import accuracy, avg_precision, f1, roc_auc
from gfigs.pipeline import PipelineConfig, fit_pipeline
from gfigs.select import mean_and_stderr
from gfigs.serialize import tree_sum_to_dict
from gfigs.tabular import Dataset

SIM_METHODS = ("CART", "CART-SEP", "FIGS", "FIGS-SEP", "G-CART", "G-FIGS")
SIM_METRICS = ("roc_auc", "avg_precision", "accuracy", "f1")


@dataclass(frozen=True)
class SimConfig:
    n_per_cluster: int = 250
    n_noise_features: int = 10
    cluster_centers_x1: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0)
    # mean of latent X2 and the label threshold on it, per cluster
    cluster_means_x2: tuple[float, ...] = (0.0, 0.0, 2.0, 2.0)
    label_thresholds: tuple[float, ...] = (0.0, 0.0, 2.0, 2.0)
    base_variance: float = 1.0
    noise_variance: float = 2.0
    seed: int = 0
    test_fraction: float = 0.5
    pooled_splits: int = 4
    group_splits: int = 1
    membership_C: float = 1.0

    def __post_init__(self):
        if self.n_per_cluster < 20:
            raise ConfigError("n_per_cluster must be at least 20")
        k = len(self.cluster_centers_x1)
        if len(self.cluster_means_x2) != k or len(self.label_thresholds) != k:
            raise ConfigError("per-cluster parameter lists must have equal length")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")

    @property
    def feature_names(self) -> list[str]:
        return ["X1", "X2"] + [f"noise{i + 1}" for i in range(self.n_noise_features)]


def gen_sim_data(cfg: SimConfig = SimConfig()) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    sd, nsd = math.sqrt(cfg.base_variance), math.sqrt(cfg.noise_variance)
    n = cfg.n_per_cluster
    blocks, ys, gs = [], [], []
    for c, (mu1, mu2, thr) in enumerate(zip(cfg.cluster_centers_x1, cfg.cluster_means_x2,
                                            cfg.label_thresholds)):
        x1 = rng.normal(mu1, sd, n)
        x2 = rng.normal(mu2, sd, n)
        ys.append((x2 > thr).astype(np.int64))
        obs1 = x1 + rng.normal(0.0, nsd, n)
        obs2 = x2 + rng.normal(0.0, nsd, n)
        noise = rng.normal(0.0, nsd, (n, cfg.n_noise_features))
        blocks.append(np.column_stack([obs1, obs2, noise]))
        gs.extend([str(c)] * n)
    return Dataset(X=np.vstack(blocks), y=np.concatenate(ys), feature_names=cfg.feature_names,
                   group=np.array(gs, dtype=object))


def _method_configs(cfg: SimConfig) -> dict[str, PipelineConfig]:
    memb = MembershipSpec("logreg", C=cfg.membership_C)
    return {
        "CART": PipelineConfig("cart", "pooled", cfg.pooled_splits, None, False, cfg.seed),
        "FIGS": PipelineConfig("figs", "pooled", cfg.pooled_splits, None, False, cfg.seed),
        "CART-SEP": PipelineConfig("cart", "separate", cfg.group_splits, None, False, cfg.seed),
        "FIGS-SEP": PipelineConfig("figs", "separate", cfg.group_splits, None, False, cfg.seed),
        "G-CART": PipelineConfig("cart", "group-weighted", cfg.group_splits, memb, False, cfg.seed),
        "G-FIGS": PipelineConfig("figs", "group-weighted", cfg.group_splits, memb, False, cfg.seed),
    }


def _groups_blob(model) -> str:
    names = list(model.feature_names)
    return json.dumps({g: tree_sum_to_dict(m, names) for g, m in sorted(model.models.items())},
                      sort_keys=True)


class ReplicateError(GFigsError):
    def __init__(self, replicate: int, cause: Exception):
        super().__init__(f"replicate {replicate} failed: {cause}")
        self.replicate = replicate


@dataclass
class SimResult:
    config: SimConfig
    per_replicate: list[dict[str, dict[str, float]]] = field(default_factory=list)
    equivalences: list[dict[str, bool]] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, tuple[float, float]]]:
        return {m: {k: mean_and_stderr([r[m][k] for r in self.per_replicate]) for k in SIM_METRICS}
                for m in SIM_METHODS}

    def format_table(self) -> str:
        s = self.summary()
        rows = [("CART", "CART"), ("CART-SEP", "CART-SEP"), ("FIGS", "FIGS"),
                ("FIGS-SEP", "FIGS-SEP")]
        merged = all(e["G-CART==G-FIGS"] for e in self.equivalences)
        rows += [("G-CART / G-FIGS", "G-FIGS")] if merged else [("G-CART", "G-CART"), ("G-FIGS", "G-FIGS")]
        head = ["", "ROC AUC", "APS", "Accuracy", "F1"]
        body = []
        for label, key in rows:
            m = s[key]
            cell = lambda k, pct: (f"{100 * m[k][0]:.1f} ({m[k][1]:.2f})" if pct
                                   else f"{m[k][0]:.3f} ({m[k][1]:.2f})")
            body.append([label, cell("roc_auc", False), cell("avg_precision", False),
                         cell("accuracy", True), cell("f1", True)])
        widths = [max(len(r[i]) for r in [head] + body) for i in range(5)]
        fmt = lambda r: "  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i])
                                  for i, c in enumerate(r))
        lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in body]
        lines.append(f"({len(self.per_replicate)} replicates, n_per_cluster="
                     f"{self.config.n_per_cluster}; standard errors in parentheses)")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "method"] + list(SIM_METRICS))
            for i, rep in enumerate(self.per_replicate):
                for m in SIM_METHODS:
                    w.writerow([i, m] + [repr(rep[m][k]) for k in SIM_METRICS])


def run_replicate(cfg: SimConfig):
    """One fresh draw: returns (metrics per method, equivalence flags, models)."""
    data = gen_sim_data(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    perm = rng.permutation(data.n_rows)
    n_test = int(round(cfg.test_fraction * data.n_rows))
    train, test = data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))

    membership = fit_membership(train, MembershipSpec("logreg", C=cfg.membership_C))
    models, metrics = {}, {}
    for name, pc in _method_configs(cfg).items():
        m = fit_pipeline(train, pc, membership=membership if pc.membership else None)
        p = m.predict(test)
        models[name] = m
        metrics[name] = {"roc_auc": roc_auc(p, test.y), "avg_precision": avg_precision(p, test.y),
                         "accuracy": accuracy(p, test.y), "f1": f1(p, test.y)}
    eq = {"G-CART==G-FIGS": _groups_blob(models["G-CART"]) == _groups_blob(models["G-FIGS"]),
          "CART-SEP==FIGS-SEP": _groups_blob(models["CART-SEP"]) == _groups_blob(models["FIGS-SEP"])}
    return metrics, eq, models


def run_sim_experiment(cfg: SimConfig = SimConfig(), replicates: int = 20,
                       strict: bool = True) -> SimResult:
    """Replicate ``r`` uses seed ``cfg.seed + r``.  No hyperparameter search.

    With a one-split budget G-CART and G-FIGS (and CART-SEP and FIGS-SEP)
    are the same algorithm; ``strict`` raises if their models ever differ.
    """
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    result = SimResult(cfg)
    for r in range(replicates):
        try:
            metrics, eq, _ = run_replicate(replace(cfg, seed=cfg.seed + r))
        except GFigsError as e:
            raise ReplicateError(r, e) from e
        if strict and cfg.group_splits == 1 and not all(eq.values()):
            raise ReplicateError(r, AssertionError(f"budget-1 equivalence violated: {eq}"))
        result.per_replicate.append(metrics)
        result.equivalences.append(eq)
    return result


# ---------------------------------------------------------------- csv export

def write_dataset_csv(data: Dataset, path, outcome_col: str = "outcome",
                      group_col: str | None = "group") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = list(data.feature_names) + [outcome_col]
        if group_col and data.group is not None:
            head.append(group_col)
        w.writerow(head)
        for i in range(data.n_rows):
            row = [repr(float(v)) for v in data.X[i]] + [int(data.y[i])]
            if group_col and data.group is not None:
                row.append(data.group[i])
            w.writerow(row)


def sim_schema(cfg: SimConfig = SimConfig()) -> dict:
    return {"columns": [{"name": n, "kind": "numeric", "imputation": "none",
                         "exclude_from_membership": False} for n in cfg.feature_names]}


# ---------------------------------------------------------------- rare outcome

RARE_SCHEMA = {"columns": [
    {"name": "age_months", "kind": "numeric", "imputation": "none", "exclude_from_membership": True},
    {"name": "amnesia", "kind": "binary", "imputation": "assume-negative", "exclude_from_membership": False},
    {"name": "headache", "kind": "binary", "imputation": "assume-negative", "exclude_from_membership": False},
    {"name": "loss_of_consciousness", "kind": "binary", "imputation": "assume-positive",
     "exclude_from_membership": False},
    {"name": "vomiting", "kind": "binary", "imputation": "assume-negative", "exclude_from_membership": False},
    {"name": "hematoma", "kind": "binary", "imputation": "assume-negative", "exclude_from_membership": False},
    {"name": "fontanelle_bulging", "kind": "binary", "imputation": "assume-negative",
     "exclude_from_membership": False},
    {"name": "altered_mental_status", "kind": "binary", "imputation": "assume-negative",
     "exclude_from_membership": False},
    {"name": "gcs", "kind": "numeric", "imputation": "median", "exclude_from_membership": False},
    {"name": "mechanism", "kind": "categorical", "imputation": "keep-missing-category",
     "exclude_from_membership": False},
]}


def gen_rare_outcome_data(path, n: int = 8000, prevalence: float = 0.009, seed: int = 0,
                          young_fraction: float = 0.35) -> None:
    """Write a two-age-group CSV with a rare outcome and item-level missingness.

    Verbal findings (amnesia, headache) are mostly missing for the under-two
    group and only predictive in the older group, so missingness itself
    carries group information.  The intercept of the outcome model is solved
    so the expected prevalence equals ``prevalence``.
    """
    rng = np.random.default_rng(seed)
    young = rng.random(n) < young_fraction
    age = np.where(young, rng.uniform(0, 24, n), rng.uniform(24, 216, n)).round(1)
    b = lambda p: (rng.random(n) < p).astype(float)
    amnesia = b(np.where(young, 0.02, 0.12))
    headache = b(np.where(young, 0.03, 0.30))
    loc = b(0.10)
    vomiting = b(0.13)
    hematoma = b(np.where(young, 0.50, 0.35))
    fontanelle = b(np.where(young, 0.02, 0.0))
    ams = b(0.12)
    gcs = np.where(rng.random(n) < 0.9, 15.0, rng.choice([13.0, 14.0], n))
    mech_levels = np.array(["fall", "vehicle", "bike", "other"])
    mech = np.where(young, rng.choice(mech_levels, n, p=[0.7, 0.15, 0.01, 0.14]),
                    rng.choice(mech_levels, n, p=[0.4, 0.25, 0.2, 0.15]))

    signal = np.where(
        young,
        3.6 * hematoma + 4.0 * fontanelle + 3.0 * ams + 2.4 * (gcs < 15) + 1.2 * vomiting,
        2.8 * amnesia + 2.0 * headache + 2.4 * loc + 2.0 * vomiting + 3.0 * ams
        + 2.4 * (gcs < 15) + 1.0 * (mech == "bike"),
    )
    lo, hi = -30.0, 5.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if np.mean(1 / (1 + np.exp(-(mid + signal)))) > prevalence:
            hi = mid
        else:
            lo = mid
    p = 1 / (1 + np.exp(-(lo + signal)))
    y = (rng.random(n) < p).astype(int)

    def with_missing(vals, rate):
        miss = rng.random(n) < rate
        return [None if m else v for v, m in zip(vals, miss)]

    cols = {
        "age_months": [repr(float(a)) for a in age],
        "amnesia": with_missing([str(int(v)) for v in amnesia], np.where(young, 0.7, 0.1)),
        "headache": with_missing([str(int(v)) for v in headache], np.where(young, 0.6, 0.1)),
        "loss_of_consciousness": with_missing([str(int(v)) for v in loc], 0.04),
        "vomiting": with_missing([str(int(v)) for v in vomiting], 0.01),
        "hematoma": with_missing([str(int(v)) for v in hematoma], 0.01),
        "fontanelle_bulging": with_missing([str(int(v)) for v in fontanelle], 0.005),
        "altered_mental_status": with_missing([str(int(v)) for v in ams], 0.01),
        "gcs": with_missing([repr(float(v)) for v in gcs], 0.02),
        "mechanism": with_missing(list(mech), 0.01),
    }
    group = np.where(young, "<2yrs", ">=2yrs")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        names = list(cols)
        w.writerow(names + ["outcome", "age_group"])
        for i in range(n):
            w.writerow([("NA" if cols[c][i] is None else cols[c][i]) for c in names]
                       + [y[i], group[i]])
