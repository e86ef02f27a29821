"""Tabular data model, CSV ingestion, imputation, splitting and class weights.

Data flows in two steps.  :func:`read_csv_table` parses a CSV into a
:class:`RawTable` that still contains missing cells; a :class:`Preprocessor`
fitted on the training rows then materializes :class:`Dataset` objects with
imputed numeric matrices and one-hot expanded categoricals.  :func:`load_csv`
does both at once for the common case.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from gfigs.errors import (
    DataValidationError,
    DegenerateClassError,
    ImputationError,
    SchemaError,
    SplitError,
)

KINDS = ("numeric", "binary", "categorical")
IMPUTATIONS = ("assume-negative", "assume-positive", "median", "keep-missing-category", "none")
MISSING_LEVEL = "MISSING"
MISSING_TOKENS = frozenset({"", "NA"})

_TRUE = frozenset({"1", "1.0", "true", "yes", "t", "y"})
_FALSE = frozenset({"0", "0.0", "false", "no", "f", "n"})


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "numeric"
    imputation: str = "none"
    exclude_from_membership: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.imputation not in IMPUTATIONS:
            raise SchemaError(f"column {self.name!r}: unknown imputation {self.imputation!r}")
        if self.imputation == "keep-missing-category" and self.kind != "categorical":
            raise SchemaError(
                f"column {self.name!r}: keep-missing-category requires a categorical column"
            )
        if self.imputation in ("assume-negative", "assume-positive") and self.kind != "binary":
            raise SchemaError(f"column {self.name!r}: {self.imputation} requires a binary column")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "imputation": self.imputation,
            "exclude_from_membership": self.exclude_from_membership,
        }


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names: {dupes}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __getitem__(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "FeatureSchema":
        cols = []
        for rec in records:
            unknown = set(rec) - {"name", "kind", "imputation", "exclude_from_membership"}
            if unknown:
                raise SchemaError(f"unknown schema keys {sorted(unknown)}")
            if "name" not in rec:
                raise SchemaError("schema record without 'name'")
            cols.append(
                Column(
                    name=str(rec["name"]),
                    kind=rec.get("kind", "numeric"),
                    imputation=rec.get("imputation", "none"),
                    exclude_from_membership=bool(rec.get("exclude_from_membership", False)),
                )
            )
        return cls(tuple(cols))

    @classmethod
    def from_json(cls, source) -> "FeatureSchema":
        """Load a schema from a path, a JSON string, or an already parsed object.

        Both a bare list of column records and ``{"columns": [...]}`` are accepted.
        """
        if isinstance(source, (str, Path)) and Path(source).exists():
            obj = json.loads(Path(source).read_text(encoding="utf-8"))
        elif isinstance(source, str):
            obj = json.loads(source)
        else:
            obj = source
        if isinstance(obj, Mapping):
            obj = obj.get("columns", [])
        if not isinstance(obj, list):
            raise SchemaError("schema must be a list of column records")
        return cls.from_records(obj)

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns]}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable, fully numeric dataset.

    ``source_columns[j]`` names the schema column expanded feature ``j`` came
    from; it is what the membership-exclusion flag is resolved against.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    group: np.ndarray | None = None
    weights: np.ndarray | None = None
    source_columns: tuple[str, ...] | None = None
    schema: FeatureSchema | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataValidationError("X must be two-dimensional")
        n = X.shape[0]
        y = np.asarray(self.y)
        if y.shape != (n,):
            raise DataValidationError(f"len(y)={y.shape[0] if y.ndim else 0} != rows(X)={n}")
        if n and not np.all((y == 0) | (y == 1)):
            raise DataValidationError("outcome must be binary in {0, 1}")
        if len(self.feature_names) != X.shape[1]:
            raise DataValidationError("feature_names does not match the number of columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaError("feature names must be unique")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (n,):
            raise DataValidationError("len(weights) != rows(X)")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise DataValidationError("weights must be finite and nonnegative")
        if n and not np.any(w > 0):
            raise DataValidationError("at least one weight must be positive")
        if np.any(~np.isfinite(X)):
            raise DataValidationError("X contains missing or non-finite values")
        g = None
        if self.group is not None:
            g = np.asarray([str(v) for v in self.group], dtype=object)
            if g.shape != (n,):
                raise DataValidationError("len(group) != rows(X)")
        src = self.source_columns
        if src is None:
            src = tuple(self.feature_names)
        if len(src) != X.shape[1]:
            raise DataValidationError("source_columns does not match the number of columns")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y.astype(np.int64)))
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "group", None if g is None else _readonly(g))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "source_columns", tuple(src))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.n_rows

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def groups(self) -> list[str]:
        if self.group is None:
            return []
        return sorted(set(self.group.tolist()))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            X=self.X[rows],
            y=self.y[rows],
            feature_names=self.feature_names,
            group=None if self.group is None else self.group[rows],
            weights=self.weights[rows],
            source_columns=self.source_columns,
            schema=self.schema,
        )

    def with_weights(self, weights) -> "Dataset":
        return Dataset(
            X=self.X,
            y=self.y,
            feature_names=self.feature_names,
            group=self.group,
            weights=weights,
            source_columns=self.source_columns,
            schema=self.schema,
        )

    def membership_features(self) -> list[int]:
        """Indices of features not flagged ``exclude_from_membership``."""
        if self.schema is None:
            return list(range(self.n_features))
        excluded = {c.name for c in self.schema.columns if c.exclude_from_membership}
        return [j for j, s in enumerate(self.source_columns) if s not in excluded]

    def membership_view(self) -> "Dataset":
        keep = self.membership_features()
        return Dataset(
            X=self.X[:, keep],
            y=self.y,
            feature_names=[self.feature_names[j] for j in keep],
            group=self.group,
            weights=self.weights,
            source_columns=[self.source_columns[j] for j in keep],
            schema=self.schema,
        )


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.60
    validation: float = 0.20
    test: float = 0.20
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        fr = (self.train, self.validation, self.test)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must be nonnegative and sum to 1, got {fr}")


@dataclass(eq=False)
class RawTable:
    """Parsed CSV cells before imputation; ``None`` marks a missing cell."""

    schema: FeatureSchema
    cells: dict[str, list]
    y: np.ndarray
    group: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def take(self, rows) -> "RawTable":
        rows = [int(i) for i in rows]
        return RawTable(
            schema=self.schema,
            cells={k: [v[i] for i in rows] for k, v in self.cells.items()},
            y=self.y[rows],
            group=None if self.group is None else self.group[rows],
            weights=None if self.weights is None else self.weights[rows],
        )


def _parse_binary(raw: str, col: str, row: int) -> float:
    s = raw.strip().lower()
    if s in _TRUE:
        return 1.0
    if s in _FALSE:
        return 0.0
    raise DataValidationError(f"column {col!r} row {row}: {raw!r} is not binary")


def _parse_numeric(raw: str, col: str, row: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise DataValidationError(f"column {col!r} row {row}: {raw!r} is not numeric") from None
    if not np.isfinite(v):
        raise DataValidationError(f"column {col!r} row {row}: non-finite value {raw!r}")
    return v


def read_csv_table(
    path,
    schema: FeatureSchema,
    outcome_col: str = "outcome",
    group_col: str | None = None,
    weight_col: str | None = None,
    require_outcome: bool = True,
) -> RawTable:
    """Parse ``path`` against ``schema``.

    Without an outcome column (``outcome_col=None``, or absent while
    ``require_outcome`` is off) the outcome vector is all zeros.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    if outcome_col is not None and outcome_col not in header and not require_outcome:
        outcome_col = None
    special = {c for c in (outcome_col, group_col, weight_col) if c}
    unknown = [h for h in header if h not in special and h not in schema.names]
    if unknown:
        raise SchemaError(f"unknown columns not in schema: {unknown}")
    absent = [n for n in schema.names if n not in header]
    if absent:
        raise SchemaError(f"schema columns missing from header: {absent}")
    for c in special:
        if c not in header:
            raise SchemaError(f"column {c!r} not found in header")
    pos = {h: i for i, h in enumerate(header)}

    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataValidationError(f"row {i + 1}: expected {len(header)} cells, got {len(r)}")

    cells: dict[str, list] = {}
    for col in schema.columns:
        j = pos[col.name]
        vals: list = []
        for i, r in enumerate(rows):
            raw = r[j].strip()
            if raw in MISSING_TOKENS:
                vals.append(None)
            elif col.kind == "binary":
                vals.append(_parse_binary(raw, col.name, i + 1))
            elif col.kind == "numeric":
                vals.append(_parse_numeric(raw, col.name, i + 1))
            else:
                vals.append(raw)
        cells[col.name] = vals

    y = []
    for i, r in enumerate(rows if outcome_col else []):
        raw = r[pos[outcome_col]].strip()
        if raw in MISSING_TOKENS:
            raise DataValidationError(f"row {i + 1}: missing outcome")
        try:
            v = float(raw)
        except ValueError:
            raise DataValidationError(f"row {i + 1}: outcome {raw!r} is not binary") from None
        if v not in (0.0, 1.0):
            raise DataValidationError(f"row {i + 1}: outcome {raw!r} is not binary")
        y.append(int(v))
    if not outcome_col:
        y = [0] * len(rows)

    group = None
    if group_col:
        group = np.array([r[pos[group_col]].strip() for r in rows], dtype=object)
        if any(g in MISSING_TOKENS for g in group):
            raise DataValidationError(f"missing values in group column {group_col!r}")
    weights = None
    if weight_col:
        weights = np.array(
            [_parse_numeric(r[pos[weight_col]].strip(), weight_col, i + 1) for i, r in enumerate(rows)]
        )
    return RawTable(schema, cells, np.array(y, dtype=np.int64), group, weights)


@dataclass
class _ColumnStats:
    fill: float | str | None = None
    levels: list[str] = field(default_factory=list)  # first-appearance order, may hold MISSING


class Preprocessor:
    """Imputation and one-hot encoding fitted on training rows only.

    ``transform(raw, for_membership=True)`` produces the membership-model
    view: categorical missing cells become their own ``MISSING`` level
    whatever the column's outcome-model policy is.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.stats: dict[str, _ColumnStats] = {}

    def fit(self, raw: RawTable) -> "Preprocessor":
        stats = {}
        for col in self.schema.columns:
            vals = raw.cells[col.name]
            present = [v for v in vals if v is not None]
            st = _ColumnStats()
            if col.kind == "categorical":
                seen: dict[str, None] = {}
                for v in vals:
                    seen.setdefault(MISSING_LEVEL if v is None else v, None)
                st.levels = list(seen)
                if col.imputation == "median":
                    if not present:
                        raise ImputationError(f"column {col.name!r}: all values missing")
                    # most frequent level, first appearance breaks ties
                    counts = {lv: present.count(lv) for lv in dict.fromkeys(present)}
                    st.fill = max(counts, key=lambda lv: counts[lv])
            elif col.imputation == "median":
                if not present:
                    raise ImputationError(f"column {col.name!r}: all values missing, cannot take median")
                st.fill = float(np.median(present))
            elif col.imputation == "assume-negative":
                st.fill = 0.0
            elif col.imputation == "assume-positive":
                st.fill = 1.0
            stats[col.name] = st
        self.stats = stats
        return self

    def feature_layout(self, for_membership: bool = False) -> list[tuple[str, str, str | None]]:
        """(feature name, source column, level) triples in materialization order."""
        out = []
        for col in self.schema.columns:
            if col.kind != "categorical":
                out.append((col.name, col.name, None))
                continue
            keep_missing = for_membership or col.imputation == "keep-missing-category"
            for lv in self.stats[col.name].levels:
                if lv == MISSING_LEVEL and not keep_missing:
                    continue
                out.append((f"{col.name}={lv}", col.name, lv))
        return out

    def transform(self, raw: RawTable, for_membership: bool = False) -> Dataset:
        if not self.stats:
            raise ImputationError("Preprocessor.transform called before fit")
        n = raw.n_rows
        layout = self.feature_layout(for_membership)
        X = np.zeros((n, len(layout)))
        j = 0
        for col in self.schema.columns:
            vals = raw.cells[col.name]
            st = self.stats[col.name]
            if col.kind != "categorical":
                for i, v in enumerate(vals):
                    if v is None:
                        if st.fill is None:
                            raise ImputationError(
                                f"column {col.name!r} row {i + 1}: missing value with imputation 'none'"
                            )
                        v = st.fill
                    X[i, j] = v
                j += 1
                continue
            width = sum(1 for name, src, _ in layout if src == col.name)
            col_levels = [lv for _, src, lv in layout if src == col.name]
            index = {lv: k for k, lv in enumerate(col_levels)}
            for i, v in enumerate(vals):
                if v is None:
                    v = MISSING_LEVEL if MISSING_LEVEL in index else st.fill
                k = index.get(v)
                # unseen levels and unimputed missing cells encode as all zeros
                if k is not None:
                    X[i, j + k] = 1.0
            j += width
        return Dataset(
            X=X,
            y=raw.y,
            feature_names=[name for name, _, _ in layout],
            group=raw.group,
            weights=raw.weights,
            source_columns=[src for _, src, _ in layout],
            schema=self.schema,
        )

    def to_dict(self) -> dict:
        return {
            name: {"fill": st.fill, "levels": list(st.levels)} for name, st in self.stats.items()
        }

    @classmethod
    def from_dict(cls, schema: FeatureSchema, d: Mapping) -> "Preprocessor":
        p = cls(schema)
        missing = [c for c in schema.names if c not in d]
        if missing:
            raise SchemaError(f"preprocessing statistics missing for {missing}")
        p.stats = {
            name: _ColumnStats(fill=v.get("fill"), levels=list(v.get("levels", [])))
            for name, v in d.items()
        }
        return p


def load_csv(
    path,
    schema: FeatureSchema,
    outcome_col: str = "outcome",
    group_col: str | None = None,
    weight_col: str | None = None,
    preprocessor: Preprocessor | None = None,
    for_membership: bool = False,
) -> Dataset:
    """Read and materialize a CSV in one go.

    Without a fitted ``preprocessor`` the imputation statistics come from the
    file itself, which is only appropriate when the file is a training set.
    """
    raw = read_csv_table(path, schema, outcome_col, group_col, weight_col)
    if preprocessor is None:
        preprocessor = Preprocessor(schema).fit(raw)
    return preprocessor.transform(raw, for_membership=for_membership)


def split_indices(n: int, spec: SplitSpec, y: Sequence[int] | None = None):
    """Shuffle ``range(n)`` with ``spec.seed`` and cut it by the split fractions.

    Returns three sorted index arrays.  With ``spec.stratify`` each outcome
    class is cut separately (``y`` required).
    """
    if n < 5:
        raise SplitError(f"need at least 5 rows to split, got {n}")
    rng = np.random.default_rng(spec.seed)

    def cut(idx):
        m = len(idx)
        n_val = int(round(m * spec.validation))
        n_test = int(round(m * spec.test))
        n_train = m - n_val - n_test
        return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]

    if spec.stratify:
        if y is None:
            raise SplitError("stratified split requires outcome labels")
        y = np.asarray(y)
        parts = [[], [], []]
        for cls in (0, 1):
            idx = np.flatnonzero(y == cls)
            idx = idx[rng.permutation(len(idx))]
            for k, p in enumerate(cut(idx)):
                parts[k].append(p)
        out = tuple(np.sort(np.concatenate(p)) for p in parts)
    else:
        out = tuple(np.sort(p) for p in cut(rng.permutation(n)))
    for name, part in zip(("train", "validation", "test"), out):
        if len(part) == 0:
            raise SplitError(f"empty {name} partition for n={n} and fractions "
                             f"({spec.train}, {spec.validation}, {spec.test})")
    return out


def split_dataset(d: Dataset, spec: SplitSpec = SplitSpec()):
    tr, va, te = split_indices(d.n_rows, spec, d.y)
    return d.subset(tr), d.subset(va), d.subset(te)


def class_weights(y) -> dict[int, float]:
    """Positive rows weighted by the inverse positive prevalence ``n / n_pos``."""
    y = np.asarray(y)
    n = len(y)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == n:
        raise DegenerateClassError("class weights need both positive and negative outcomes")
    return {0: 1.0, 1: n / n_pos}
