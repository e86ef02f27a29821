"""Classification metrics with the high-sensitivity operating points used for
clinical decision instruments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfigs.errors import DegenerateClassError

SENSITIVITY_LEVELS = (0.92, 0.94, 0.96, 0.98)


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateClassError("metric needs both positive and negative labels")
    return s, y.astype(np.int64), n_pos, len(y) - n_pos


def _threshold_counts(s, y):
    """(TP, FP) when predicting positive iff score >= t, for t over the distinct
    scores in descending order, preceded by t = +inf."""
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    return np.r_[0, tp], np.r_[0, fp]


def spec_at_sens(scores, labels, level: float) -> float:
    """Best specificity over thresholds whose sensitivity is at least ``level``."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    tp, fp = _threshold_counts(s, y)
    ok = tp / n_pos >= level
    if not ok.any():
        return 0.0
    return float(np.max((n_neg - fp[ok]) / n_neg))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    s_sorted = s[order]
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def avg_precision(scores, labels) -> float:
    """Sum of precision times recall increment over the descending threshold sweep."""
    s, y, n_pos, _ = _prepare(scores, labels)
    tp, fp = _threshold_counts(s, y)
    tp, fp = tp[1:], fp[1:]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def accuracy(scores, labels, cutoff: float = 0.5) -> float:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    return float(np.mean((s >= cutoff).astype(int) == y))


def f1(scores, labels, cutoff: float = 0.5) -> float:
    pred = np.asarray(scores, dtype=float) >= cutoff
    y = np.asarray(labels) == 1
    tp = int(np.sum(pred & y))
    denom = int(pred.sum()) + int(y.sum())
    return 0.0 if denom == 0 else 2.0 * tp / denom


@dataclass
class MetricReport:
    spec_at_sens: dict[float, float] = field(default_factory=dict)
    roc_auc: float = float("nan")
    avg_precision: float = float("nan")
    accuracy: float = float("nan")
    f1: float = float("nan")
    n_pos: int = 0
    n_neg: int = 0

    def to_dict(self) -> dict:
        return {
            "spec_at_sens": {f"{lv:.2f}": v for lv, v in sorted(self.spec_at_sens.items())},
            "roc_auc": self.roc_auc,
            "avg_precision": self.avg_precision,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


def evaluate(scores, labels, levels=SENSITIVITY_LEVELS) -> MetricReport:
    s, y, n_pos, n_neg = _prepare(scores, labels)
    return MetricReport(
        spec_at_sens={float(lv): spec_at_sens(s, y, lv) for lv in levels},
        roc_auc=roc_auc(s, y),
        avg_precision=avg_precision(s, y),
        accuracy=accuracy(s, y),
        f1=f1(s, y),
        n_pos=n_pos,
        n_neg=n_neg,
    )


def format_sensitivity_table(rows: dict[str, MetricReport], levels=SENSITIVITY_LEVELS,
                             stderr: dict[str, dict[float, float]] | None = None,
                             extra: bool = True) -> str:
    """Aligned text table: one row per method, specificity (%) per sensitivity level."""
    head = ["Sensitivity level:"] + [f"{100 * lv:.0f}%" for lv in levels]
    if extra:
        head += ["ROC AUC", "F1"]
    body = []
    for name, rep in rows.items():
        cells = [name]
        for lv in levels:
            v = f"{100 * rep.spec_at_sens[lv]:.1f}"
            if stderr is not None:
                v += f" ({100 * stderr[name][lv]:.1f})"
            cells.append(v)
        if extra:
            cells += [f".{round(1000 * rep.roc_auc):03d}" if rep.roc_auc < 1 else "1.000",
                      f"{100 * rep.f1:.1f}"]
        body.append(cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i])
                              for i, c in enumerate(r))
    lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
