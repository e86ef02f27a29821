"""Two-stage hyperparameter selection over split budgets and membership models.

Stage one picks, for every (method, membership model) pair and every group
separately, the split budget with the best validation specificity at the
primary sensitivity level.  Stage two then picks, per method, the membership
model whose stage-one winners do best when the groups' validation scores are
pooled.  Ties fall through to specificity at 90% sensitivity, then to the
smaller budget (stage one) or the earlier membership model in the grid's
order (stage two).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gfigs.errors import ConfigError
from gfigs.figs import TreeSumModel
from gfigs.membership import DEFAULT_MEMBERSHIP_GRID, MembershipSpec, fit_membership
from gfigs.metrics import SENSITIVITY_LEVELS, MetricReport, evaluate, spec_at_sens
from gfigs.pipeline import POOLED_KEY, GFigsModel, PipelineConfig, fit_pipeline
from gfigs.tabular import Dataset, Preprocessor, RawTable, SplitSpec, split_indices

TIEBREAK_LEVEL = 0.90


@dataclass(frozen=True)
class Candidate:
    method: str
    membership: str | None
    max_splits: int


@dataclass
class Selection:
    method: str
    membership: str | None
    max_splits: dict[str, int]
    stage1: dict[tuple, tuple[float, ...]] = field(default_factory=dict)
    stage2: dict[str | None, tuple[float, ...]] = field(default_factory=dict)


def _criterion_key(scores, labels, criterion: str) -> tuple[float, ...]:
    tie = spec_at_sens(scores, labels, TIEBREAK_LEVEL)
    if criterion == "90":
        return (tie,)
    return (spec_at_sens(scores, labels, 0.94), tie)


def two_stage_select(results: Mapping[Candidate, Mapping[str, tuple]],
                     membership_order: Sequence[str | None] | None = None,
                     criterion: str = "94") -> dict[str, Selection]:
    """Select per-group budgets and a shared membership model for each method.

    ``results[candidate][group]`` is the ``(scores, labels)`` pair of that
    candidate's model on the group's validation rows.  ``criterion="90"``
    uses specificity at 90% sensitivity alone.
    """
    if criterion not in ("94", "90"):
        raise ConfigError(f"criterion must be '94' or '90', got {criterion!r}")
    if not results:
        raise ConfigError("empty candidate grid")
    if membership_order is None:
        membership_order = list(dict.fromkeys(c.membership for c in results))
    rank = {m: i for i, m in enumerate(membership_order)}
    missing = {c.membership for c in results} - set(rank)
    if missing:
        raise ConfigError(f"membership models absent from the canonical order: {sorted(map(str, missing))}")

    out = {}
    for method in dict.fromkeys(c.method for c in results):
        cands = [c for c in results if c.method == method]
        stage1: dict[tuple, tuple[float, ...]] = {}
        winners: dict[str | None, dict[str, int]] = {}
        for memb in sorted({c.membership for c in cands}, key=rank.__getitem__):
            pool = sorted((c for c in cands if c.membership == memb), key=lambda c: c.max_splits)
            groups = sorted(set().union(*(results[c].keys() for c in pool)))
            winners[memb] = {}
            for g in groups:
                best = None
                for c in pool:
                    key = _criterion_key(*results[c][g], criterion)
                    stage1[(memb, g, c.max_splits)] = key
                    # strict > keeps the smaller budget on a full tie
                    if best is None or key > best[0]:
                        best = (key, c.max_splits)
                winners[memb][g] = best[1]

        stage2: dict[str | None, tuple[float, ...]] = {}
        best_memb = None
        for memb in sorted(winners, key=rank.__getitem__):
            parts = [results[Candidate(method, memb, k)][g] for g, k in winners[memb].items()]
            scores = np.concatenate([np.asarray(p[0], dtype=float) for p in parts])
            labels = np.concatenate([np.asarray(p[1]) for p in parts])
            stage2[memb] = _criterion_key(scores, labels, criterion)
            if best_memb is None or stage2[memb] > stage2[best_memb]:
                best_memb = memb
        out[method] = Selection(method, best_memb, winners[best_memb], stage1, stage2)
    return out


# ---------------------------------------------------------------- grid runs

@dataclass(frozen=True)
class SelectionGrid:
    learners: tuple[str, ...] = ("cart", "figs")
    variants: tuple[str, ...] = ("pooled", "separate", "group-weighted")
    max_splits: tuple[int, ...] = (8, 12, 16)
    memberships: tuple[MembershipSpec, ...] = DEFAULT_MEMBERSHIP_GRID
    criterion: str = "94"
    class_weighting: bool = True

    def __post_init__(self):
        if not self.learners or not self.variants or not self.max_splits:
            raise ConfigError("empty candidate grid")
        if "group-weighted" in self.variants and not self.memberships:
            raise ConfigError("group-weighted variant needs at least one membership model")
        if self.criterion not in ("94", "90"):
            raise ConfigError("criterion must be '94' or '90'")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectionGrid":
        d = dict(d)
        unknown = set(d) - {"learners", "variants", "max_splits", "membership", "criterion",
                            "class_weighting"}
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        kw = {}
        for k in ("learners", "variants", "max_splits"):
            if k in d:
                v = d[k]
                kw[k] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
        if "variants" in kw:
            kw["variants"] = tuple("separate" if v == "sep" else v for v in kw["variants"])
        if "membership" in d:
            kw["memberships"] = tuple(MembershipSpec.from_dict(m) for m in d["membership"])
        for k in ("criterion", "class_weighting"):
            if k in d:
                kw[k] = d[k]
        if "criterion" in kw:
            kw["criterion"] = str(kw["criterion"])
        return cls(**kw)

    def methods(self) -> list[tuple[str, str, str]]:
        """(method name, learner, variant) in canonical order."""
        out = []
        for variant in ("pooled", "separate", "group-weighted"):
            if variant not in self.variants:
                continue
            for learner in self.learners:
                cfg = PipelineConfig(learner, variant, 1,
                                     MembershipSpec() if variant == "group-weighted" else None)
                out.append((cfg.method_name, learner, variant))
        return out


@dataclass
class SeedResult:
    seed: int
    selections: dict[str, Selection]
    models: dict[str, GFigsModel]
    test_reports: dict[str, MetricReport]


def _partitions(data, seed: int, fractions):
    spec = SplitSpec(*fractions, seed=seed)
    if isinstance(data, RawTable):
        tr, va, te = split_indices(data.n_rows, spec)
        raw_tr = data.take(tr)
        pre = Preprocessor(data.schema).fit(raw_tr)
        return (pre.transform(raw_tr), pre.transform(data.take(va)), pre.transform(data.take(te)),
                pre.transform(raw_tr, for_membership=True), pre)
    tr, va, te = split_indices(data.n_rows, spec)
    return data.subset(tr), data.subset(va), data.subset(te), None, None


def _validation_parts(model: GFigsModel, val: Dataset, variant: str) -> dict[str, tuple]:
    p = model.predict(val)
    if variant == "pooled":
        return {POOLED_KEY: (p, val.y)}
    return {g: (p[val.group == g], val.y[val.group == g]) for g in model.models}


def run_selection(data, grid: SelectionGrid, seeds: Sequence[int],
                  fractions=(0.6, 0.2, 0.2), levels=SENSITIVITY_LEVELS) -> list[SeedResult]:
    """Split, fit every candidate, select on validation, score winners on test.

    ``data`` is either a :class:`RawTable` (imputation is then refit on each
    seed's training rows) or an already materialized :class:`Dataset`.
    """
    out = []
    for seed in seeds:
        train, val, test, memb_train, pre = _partitions(data, seed, fractions)
        fitted_memb = {}
        if "group-weighted" in grid.variants:
            src = memb_train if memb_train is not None else train
            fitted_memb = {m.key: fit_membership(src, m) for m in grid.memberships}
        results: dict[Candidate, dict] = {}
        fitted: dict[Candidate, GFigsModel] = {}
        for method, learner, variant in grid.methods():
            membs = list(grid.memberships) if variant == "group-weighted" else [None]
            for m in membs:
                for k in grid.max_splits:
                    cfg = PipelineConfig(learner, variant, int(k), m, grid.class_weighting, seed)
                    model = fit_pipeline(train, cfg,
                                         membership=None if m is None else fitted_memb[m.key],
                                         membership_data=memb_train)
                    cand = Candidate(method, None if m is None else m.key, int(k))
                    fitted[cand] = model
                    results[cand] = _validation_parts(model, val, variant)
        order = [None] + [m.key for m in grid.memberships]
        selections = two_stage_select(results, order, grid.criterion)

        models, reports = {}, {}
        for method, learner, variant in grid.methods():
            sel = selections[method]
            parts = {g: fitted[Candidate(method, sel.membership, k)].models[g]
                     for g, k in sel.max_splits.items()}
            proto = fitted[Candidate(method, sel.membership, next(iter(sel.max_splits.values())))]
            cfg = PipelineConfig(learner, variant,
                                 sel.max_splits if variant != "pooled" else sel.max_splits[POOLED_KEY],
                                 proto.config.membership, grid.class_weighting, seed)
            model = GFigsModel(parts, cfg, proto.feature_names, proto.group_labels,
                               proto.membership, proto.schema, pre)
            models[method] = model
            reports[method] = evaluate(model.predict(test), test.y, levels)
        out.append(SeedResult(seed, selections, models, reports))
    return out


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def aggregate_reports(per_seed: Sequence[Mapping[str, MetricReport]], levels=SENSITIVITY_LEVELS):
    """Mean report and per-level standard errors across seeds, per method."""
    methods = list(per_seed[0])
    means, errs = {}, {}
    for m in methods:
        reps = [s[m] for s in per_seed]
        st = {}
        agg = MetricReport()
        for lv in levels:
            agg.spec_at_sens[lv], st[lv] = mean_and_stderr([r.spec_at_sens[lv] for r in reps])
        for attr in ("roc_auc", "avg_precision", "accuracy", "f1"):
            setattr(agg, attr, mean_and_stderr([getattr(r, attr) for r in reps])[0])
        agg.n_pos = int(sum(r.n_pos for r in reps))
        agg.n_neg = int(sum(r.n_neg for r in reps))
        means[m], errs[m] = agg, st
    return means, errs


def validation_summary(results: Sequence[SeedResult]) -> str:
    """Stage-one and stage-two validation metrics averaged over seeds."""
    lines = []
    rows: dict[tuple, list] = {}
    budgets: set[int] = set()
    groups_seen: list[str] = []
    stage2: dict[tuple, list] = {}
    for r in results:
        for method, sel in r.selections.items():
            for (memb, g, k), key in sel.stage1.items():
                rows.setdefault((method, memb), {}).setdefault((g, k), []).append(key[0])
                budgets.add(k)
                if g not in groups_seen:
                    groups_seen.append(g)
            for memb, key in sel.stage2.items():
                if memb is not None:
                    stage2.setdefault((method, memb), []).append(key[0])
    budgets_s = sorted(budgets)
    cols = [(g, k) for g in sorted(groups_seen) for k in budgets_s]
    head = ["method"] + [f"{g}:{k}" for g, k in cols]
    body = []
    for (method, memb), cells in rows.items():
        name = method if memb is None else f"{method} w/ {memb}"
        row = [name]
        for c in cols:
            if c in cells:
                mu, se = mean_and_stderr(cells[c])
                row.append(f"{100 * mu:.1f} ({100 * se:.1f})")
            else:
                row.append("-")
        body.append(row)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                              for i, c in enumerate(r))
    lines += ["(a) validation specificity per group and split budget", fmt(head),
              "-" * len(fmt(head))] + [fmt(r) for r in body]
    if stage2:
        lines += ["", "(b) validation specificity, groups combined"]
        for (method, memb), vals in stage2.items():
            mu, se = mean_and_stderr(vals)
            lines.append(f"{method} w/ {memb}: {100 * mu:.1f} ({100 * se:.1f})")
    return "\n".join(lines) + "\n"
