"""Tabular data, the condition vocabulary, and coverage primitives.

Raw feature values are stored as a float matrix.  Categorical features are
encoded by their position in the schema's category list, so a query is
always a plain float vector of length ``p``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bitset import CoverageSet, from_bool, full

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

LE, GT, EQ, NE = "<=", ">", "==", "!="
_OPS = (LE, GT, EQ, NE)
_OP_CODE = {op: i for i, op in enumerate(_OPS)}
_OP_RANK = {LE: 0, GT: 1, EQ: 2, NE: 3}


class DataError(ValueError):
    """A malformed input file; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class OutOfBoundsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    categories: tuple = ()
    bounds: tuple | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise ValueError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            cats = tuple(str(c) for c in self.categories)
            if not cats:
                raise ValueError(f"feature {self.name!r}: no categories")
            if len(set(cats)) != len(cats):
                raise ValueError(f"feature {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
            object.__setattr__(self, "bounds", (0.0, float(len(cats) - 1)))
        elif self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ValueError(f"feature {self.name!r}: min must be < max")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = list(self.categories)
        elif self.bounds is not None:
            d["min"], d["max"] = self.bounds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Feature":
        kind = d.get("kind", CONTINUOUS)
        bounds = None
        if "min" in d and "max" in d:
            bounds = (d["min"], d["max"])
        elif "bounds" in d:
            bounds = tuple(d["bounds"])
        return cls(d["name"], kind, tuple(d.get("categories", ())), bounds)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple

    def __post_init__(self):
        feats = tuple(self.features)
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return len(self.features)

    def __getitem__(self, j) -> Feature:
        return self.features[j]

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        for j, f in enumerate(self.features):
            if f.name == name:
                return j
        raise KeyError(f"unknown feature {name!r}")

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.features], dtype=bool)

    def encode(self, j: int, value) -> float:
        """Parse one raw cell for feature ``j``."""
        f = self.features[j]
        if f.is_categorical:
            try:
                return float(f.categories.index(str(value).strip()))
            except ValueError:
                raise DataError(f"unknown category {value!r} for feature {f.name!r}") from None
        return float(value)

    def decode(self, j: int, value: float):
        f = self.features[j]
        if f.is_categorical:
            return f.categories[int(value)]
        return value

    def resolve_bounds(self, X: np.ndarray) -> "FeatureSchema":
        """Fill missing continuous bounds from the data range."""
        feats = []
        for j, f in enumerate(self.features):
            if not f.is_categorical and f.bounds is None:
                lo, hi = float(X[:, j].min()), float(X[:, j].max())
                if lo == hi:
                    lo, hi = lo - 0.5, hi + 0.5
                f = replace(f, bounds=(lo, hi))
            feats.append(f)
        return FeatureSchema(tuple(feats))

    def to_list(self) -> list:
        return [f.to_dict() for f in self.features]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "FeatureSchema":
        return cls(tuple(Feature.from_dict(d) for d in items))


@dataclass(frozen=True)
class Condition:
    """A binary predicate ``x[feature] op value`` on one raw feature.

    For categorical features ``value`` is the category's code.
    """

    feature: int
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        object.__setattr__(self, "value", float(self.value))

    def holds(self, x) -> bool:
        v = x[self.feature]
        if self.op == LE:
            return v <= self.value
        if self.op == GT:
            return v > self.value
        if self.op == EQ:
            return v == self.value
        return v != self.value

    def negated(self) -> "Condition":
        return Condition(self.feature, {LE: GT, GT: LE, EQ: NE, NE: EQ}[self.op], self.value)

    def sort_key(self):
        return (self.feature, self.value, _OP_RANK[self.op])

    def describe(self, schema: FeatureSchema | None = None) -> str:
        if schema is None:
            return f"x{self.feature} {self.op} {self.value:g}"
        f = schema[self.feature]
        value = f"{self.value:g}"
        if f.is_categorical and 0 <= self.value < len(f.categories):
            value = f.categories[int(self.value)]
        return f"{f.name} {self.op} {value}"

    def to_dict(self, schema: FeatureSchema) -> dict:
        f = schema[self.feature]
        value = f.categories[int(self.value)] if f.is_categorical else self.value
        return {"feature": f.name, "op": self.op, "value": value}

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema) -> "Condition":
        j = schema.index(d["feature"])
        f = schema[j]
        value = d["value"]
        if f.is_categorical:
            value = schema.encode(j, value)
        return cls(j, d["op"], float(value))

    def validate(self, schema: FeatureSchema) -> None:
        f = schema[self.feature]
        if f.is_categorical:
            if self.op not in (EQ, NE):
                raise ValueError(f"{self.describe(schema)}: categorical feature needs == or !=")
            if not (0 <= self.value < len(f.categories)) or self.value != int(self.value):
                raise ValueError(f"{self.describe(schema)}: category code out of range")
        else:
            if self.op not in (LE, GT):
                raise ValueError(f"{self.describe(schema)}: continuous feature needs <= or >")
            if f.bounds is not None and not (f.bounds[0] < self.value < f.bounds[1]):
                raise ValueError(f"{self.describe(schema)}: threshold not inside feature bounds")


class ConditionTable:
    """Vectorised evaluation of a fixed condition vocabulary."""

    def __init__(self, conditions: Sequence[Condition]):
        self.conditions = tuple(conditions)
        self.feature = np.array([c.feature for c in self.conditions], dtype=np.intp)
        self.op = np.array([_OP_CODE[c.op] for c in self.conditions], dtype=np.int8)
        self.value = np.array([c.value for c in self.conditions], dtype=float)

    def __len__(self):
        return len(self.conditions)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Boolean matrix ``(n, m)``: entry ``[i, j]`` is condition ``j`` on row ``i``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = X[:, self.feature]
        t = self.value
        out = np.where(self.op == 0, V <= t, V > t)
        out = np.where(self.op == 2, V == t, out)
        out = np.where(self.op == 3, V != t, out)
        return out

    def mask(self, x: np.ndarray) -> int:
        """Integer bitmask of conditions satisfied by a single query."""
        return from_bool(self.evaluate(x)[0])


@dataclass
class RawDataset:
    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(self.schema))
        self.y = np.asarray(self.y, dtype=np.int8)
        if len(self.y) != len(self.X):
            raise ValueError("X and y lengths differ")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def p(self) -> int:
        return len(self.schema)

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.schema, self.X[idx], self.y[idx])


def load_csv(path, schema: FeatureSchema, label: str | None = None) -> RawDataset:
    """Read a comma-separated file whose last column is a 0/1 label.

    Rows are numbered from 1 (the first line after the header) in errors.
    Continuous features without bounds get them from the data range.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:-1] != schema.names:
            raise DataError(f"{path}: header {header[:-1]} does not match schema {schema.names}")
        if label is not None and header[-1] != label:
            raise DataError(f"{path}: expected label column {label!r}, found {header[-1]!r}")
        p = len(schema)
        X, y = [], []
        for r, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != p + 1:
                raise DataError(f"{path}: row {r} has {len(cells)} cells, expected {p + 1}", row=r)
            row = []
            for j, cell in enumerate(cells[:-1]):
                try:
                    row.append(schema.encode(j, cell))
                except DataError as exc:
                    raise DataError(f"{path}: row {r}, column {schema[j].name!r}: {exc}",
                                    row=r, column=schema[j].name) from None
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {schema[j].name!r}: "
                                    f"cannot parse {cell!r}", row=r, column=schema[j].name) from None
            lab = cells[-1].strip()
            if lab not in ("0", "1"):
                raise DataError(f"{path}: row {r}, column {header[-1]!r}: label must be 0 or 1, "
                                f"got {lab!r}", row=r, column=header[-1])
            X.append(row)
            y.append(int(lab))
    X = np.array(X, dtype=float).reshape(-1, p)
    if len(X):
        schema = schema.resolve_bounds(X)
    return RawDataset(schema, X, np.array(y, dtype=np.int8))


def save_csv(path, raw: RawDataset, label: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(raw.schema.names + [label])
        for x, yi in zip(raw.X, raw.y):
            cells = []
            for j, v in enumerate(x):
                f = raw.schema[j]
                cells.append(f.categories[int(v)] if f.is_categorical else _fmt(v))
            w.writerow(cells + [int(yi)])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class BinarizationPolicy:
    """How conditions are generated from raw features.

    ``quantiles`` caps the number of thresholds per continuous feature;
    ``thresholds`` maps a feature name to an explicit threshold list.
    """

    quantiles: int = 8
    thresholds: dict = field(default_factory=dict)
    categorical_ne: bool = False


def midpoint_thresholds(values: np.ndarray, q: int) -> np.ndarray:
    """Midpoints between consecutive distinct values, at most ``q`` of them."""
    u = np.unique(values)
    if len(u) < 2:
        return np.empty(0)
    mids = (u[:-1] + u[1:]) / 2.0
    if len(mids) <= q:
        return mids
    levels = np.arange(1, q + 1) / (q + 1)
    targets = np.quantile(values, levels)
    pos = np.minimum(np.searchsorted(mids, targets), len(mids) - 1)
    return mids[np.unique(pos)]


def _with_complements(conds: Iterable[Condition]) -> set:
    out = set()
    for c in conds:
        out.add(c)
        if c.op in (LE, GT):
            out.add(c.negated())
    return out


def build_vocabulary(raw: RawDataset, policy: BinarizationPolicy | None = None,
                     include: Iterable[Condition] = ()) -> tuple[list, list]:
    """Return (sorted conditions, warning records) for a dataset."""
    policy = policy or BinarizationPolicy()
    schema = raw.schema
    conds = set()
    notes = []
    for j, f in enumerate(schema):
        col = raw.X[:, j]
        if len(np.unique(col)) < 2:
            notes.append(f"feature {f.name!r} has a single unique value; skipped")
            log.warning(notes[-1])
            continue
        if f.is_categorical:
            for k in range(len(f.categories)):
                conds.add(Condition(j, EQ, k))
                if policy.categorical_ne:
                    conds.add(Condition(j, NE, k))
            continue
        if f.name in policy.thresholds:
            ts = np.asarray(sorted(set(float(t) for t in policy.thresholds[f.name])))
        else:
            ts = midpoint_thresholds(col, policy.quantiles)
        for t in ts:
            conds.add(Condition(j, LE, t))
            conds.add(Condition(j, GT, t))
    conds |= _with_complements(include)
    for c in conds:
        c.validate(schema)
    return sorted(conds, key=Condition.sort_key), notes


class BinarizedDataset:
    """Immutable binary view ``X~`` of a raw dataset under a condition vocabulary."""

    def __init__(self, raw: RawDataset, conditions: Sequence[Condition], notes=()):
        self.raw = raw
        self.schema = raw.schema
        self.table = ConditionTable(conditions)
        self.conditions = self.table.conditions
        self.index = {c: j for j, c in enumerate(self.conditions)}
        self.notes = list(notes)
        self.matrix = self.table.evaluate(raw.X) if raw.n else np.zeros((0, len(conditions)), bool)
        self.matrix.setflags(write=False)
        n, m = self.matrix.shape
        self.n, self.m = n, m
        self.y = raw.y
        self.columns = _pack_columns(self.matrix)
        self.universe = full(n)

    @property
    def X(self) -> np.ndarray:
        return self.raw.X

    def col(self, j: int) -> CoverageSet:
        return CoverageSet(self.columns[j], self.n)

    def row(self, i: int) -> np.ndarray:
        return self.matrix[i]

    def support(self, beta: Iterable[int], view: CoverageSet | None = None):
        return support(beta, self, view)

    def apply(self, raw: RawDataset) -> "BinarizedDataset":
        """Binarize another dataset with this vocabulary (e.g. the test split)."""
        return BinarizedDataset(raw, self.conditions)

    def ids(self, conditions: Iterable[Condition]) -> tuple:
        return tuple(sorted(self.index[c] for c in conditions))

    def describe(self, beta: Iterable[int]) -> str:
        parts = [self.conditions[j].describe(self.schema) for j in sorted(beta)]
        return " AND ".join(parts) if parts else "TRUE"


def _pack_columns(matrix: np.ndarray) -> list:
    if matrix.shape[0] == 0:
        return [0] * matrix.shape[1]
    packed = np.packbits(matrix, axis=0, bitorder="little")
    return [int.from_bytes(packed[:, j].tobytes(), "little") for j in range(matrix.shape[1])]


def binarize(raw: RawDataset, policy: BinarizationPolicy | None = None,
             include: Iterable[Condition] = ()) -> BinarizedDataset:
    """Binarize ``raw``; conditions in ``include`` (and their complements) are always kept."""
    if raw.n == 0:
        raise ValueError("cannot binarize an empty dataset")
    conds, notes = build_vocabulary(raw, policy, include)
    return BinarizedDataset(raw, conds, notes)


def cap(beta: Iterable[int], row) -> bool:
    """True iff the binary row satisfies every condition in ``beta``."""
    return all(row[j] for j in beta)


def support(beta: Iterable[int], data: BinarizedDataset,
            view: CoverageSet | None = None) -> tuple[int, CoverageSet]:
    """Rows captured by the conjunction ``beta``, optionally restricted to ``view``."""
    bits = data.universe if view is None else view.bits
    for j in beta:
        bits &= data.columns[j]
        if not bits:
            break
    s = CoverageSet(bits, data.n)
    return s.count, s


def clamp_query(x, schema: FeatureSchema) -> np.ndarray:
    x = np.array(x, dtype=float)
    for j, f in enumerate(schema):
        if f.bounds is None:
            continue
        lo, hi = f.bounds
        v = x[j]
        if math.isnan(v) or v < lo or v > hi:
            warnings.warn(f"query value {v!r} for {f.name!r} outside [{lo}, {hi}]; clamped",
                          OutOfBoundsWarning, stacklevel=3)
            x[j] = lo if math.isnan(v) else min(max(v, lo), hi)
    return x


def satisfied_conditions(query, conditions, schema: FeatureSchema | None = None) -> frozenset:
    """Ids of the conditions that hold on a raw query.

    ``conditions`` is a condition sequence, a :class:`ConditionTable` or a
    :class:`BinarizedDataset`.  With a schema, out-of-range values are
    clamped to the feature bounds (emitting :class:`OutOfBoundsWarning`).
    """
    if isinstance(conditions, BinarizedDataset):
        schema = schema or conditions.schema
        table = conditions.table
    elif isinstance(conditions, ConditionTable):
        table = conditions
    else:
        table = ConditionTable(conditions)
    if schema is not None:
        query = clamp_query(query, schema)
    return frozenset(np.flatnonzero(table.evaluate(query)[0]).tolist())
