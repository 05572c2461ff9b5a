"""Protected models: decision sets and piecewise-constant GAMs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bitset import CoverageSet
from .dataset import (EQ, GT, LE, NE, BinarizedDataset, Condition, ConditionTable,
                      FeatureSchema, cap)

FORMAT = "faithful-defense/model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def contradiction(conditions: Iterable[Condition]) -> tuple | None:
    """Return a pair of mutually exclusive conditions, or None."""
    by_feature: dict = {}
    for c in conditions:
        by_feature.setdefault(c.feature, []).append(c)
    for conds in by_feature.values():
        upper = [c for c in conds if c.op == LE]
        lower = [c for c in conds if c.op == GT]
        for a in upper:
            for b in lower:
                if b.value >= a.value:
                    return (a, b)
        eq = [c for c in conds if c.op == EQ]
        for a in eq:
            for b in eq:
                if a.value != b.value:
                    return (a, b)
            for b in conds:
                if b.op == NE and b.value == a.value:
                    return (a, b)
    return None


@dataclass(frozen=True)
class Rule:
    """A conjunction of condition ids, with its training coverage once bound."""

    conditions: tuple
    coverage: CoverageSet | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(sorted(set(int(j) for j in self.conditions))))
        if not self.conditions:
            raise ValueError("a rule needs at least one condition")

    def __len__(self):
        return len(self.conditions)

    def __iter__(self):
        return iter(self.conditions)

    @property
    def support(self) -> int | None:
        return None if self.coverage is None else self.coverage.count


@dataclass(frozen=True)
class DecisionSet:
    """An OR of conjunctions over a condition vocabulary."""

    schema: FeatureSchema
    conditions: tuple
    rules: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        rules = tuple(r if isinstance(r, Rule) else Rule(tuple(r)) for r in self.rules)
        object.__setattr__(self, "rules", rules)
        m = len(self.conditions)
        for i, r in enumerate(rules):
            for j in r:
                if not 0 <= j < m:
                    raise ModelFormatError(f"rule {i} references undefined condition id {j}")
            bad = contradiction(self.conditions[j] for j in r)
            if bad:
                a, b = (c.describe(self.schema) for c in bad)
                raise ValueError(f"rule {i} is contradictory: {a!r} and {b!r}")
        object.__setattr__(self, "_table", ConditionTable(self.conditions))
        object.__setattr__(self, "rule_masks",
                           tuple(sum(1 << j for j in r.conditions) for r in rules))

    def __len__(self):
        return len(self.rules)

    def rule_conditions(self, i: int) -> list:
        return [self.conditions[j] for j in self.rules[i]]

    def all_conditions(self) -> list:
        return [c for i in range(len(self.rules)) for c in self.rule_conditions(i)]

    def bind(self, data: BinarizedDataset) -> "DecisionSet":
        """Re-express the rules in ``data``'s vocabulary and cache rule coverage."""
        rules = []
        for i in range(len(self.rules)):
            try:
                ids = data.ids(self.rule_conditions(i))
            except KeyError as exc:
                raise ValueError(f"rule {i} uses a condition missing from the dataset "
                                 f"vocabulary: {exc.args[0].describe(self.schema)}") from None
            _, cov = data.support(ids)
            rules.append(Rule(ids, cov))
        return DecisionSet(data.schema, data.conditions, tuple(rules), dict(self.metadata))

    def satisfied_rules(self, row) -> list:
        return [i for i, r in enumerate(self.rules) if cap(r.conditions, row)]

    def predict_binary(self, matrix: np.ndarray) -> np.ndarray:
        """Labels for each row of a binary matrix over this vocabulary."""
        matrix = np.atleast_2d(matrix)
        out = np.zeros(len(matrix), dtype=bool)
        for r in self.rules:
            out |= matrix[:, list(r.conditions)].all(axis=1)
        return out.astype(np.int8)

    def predict_raw(self, X) -> np.ndarray:
        return self.predict_binary(self._table.evaluate(X))


def predict(f: DecisionSet, row) -> tuple[int, list]:
    """Label of a binary row and the ids of the rules it satisfies."""
    hit = f.satisfied_rules(row)
    return int(bool(hit)), hit


# ---------------------------------------------------------------------------
# GAM with step shape functions

IDENTITY = "identity"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class GamModel:
    """``score(x) = intercept + sum_j weights[j][k]`` where ``edges[j][k] < x_j <= edges[j][k+1]``.

    ``edges[j]`` runs from ``-inf`` to ``+inf``; ``tau`` thresholds the
    linear score (a positive prediction is ``score > tau``).
    """

    schema: FeatureSchema
    intercept: float
    edges: tuple
    weights: tuple
    tau: float = 0.0
    link: str = IDENTITY
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.edges) != len(self.schema) or len(self.weights) != len(self.schema):
            raise ValueError("need one edge list and one weight list per feature")
        if self.link not in (IDENTITY, LOGISTIC):
            raise ValueError(f"unknown link {self.link!r}")
        edges, weights = [], []
        for j, (e, w) in enumerate(zip(self.edges, self.weights)):
            if self.schema[j].is_categorical:
                raise ValueError("GAM shape functions are defined on continuous features only")
            e = tuple(float(b) for b in e)
            w = tuple(float(v) for v in w)
            if e[0] != -math.inf or e[-1] != math.inf:
                raise ValueError(f"feature {j}: edges must start at -inf and end at +inf")
            if any(a >= b for a, b in zip(e, e[1:])):
                raise ValueError(f"feature {j}: edges must be strictly increasing")
            if len(w) != len(e) - 1 or not w:
                raise ValueError(f"feature {j}: need one weight per bin")
            edges.append(e)
            weights.append(w)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_interior(cls, schema, intercept, interior_edges, weights, **kw) -> "GamModel":
        edges = tuple((-math.inf, *e, math.inf) for e in interior_edges)
        return cls(schema, intercept, edges, tuple(weights), **kw)

    @property
    def p(self) -> int:
        return len(self.schema)

    def bin_index(self, j: int, v: float) -> int:
        return int(np.searchsorted(self.edges[j], v, side="left")) - 1

    def bins(self, x) -> list:
        return [self.bin_index(j, x[j]) for j in range(self.p)]

    def predict(self, x) -> int:
        return int(gam_score(self, x) > self.tau)

    def predict_proba(self, x) -> float:
        s = gam_score(self, x)
        return 1.0 / (1.0 + math.exp(-s)) if self.link == LOGISTIC else s

    def representatives(self, j: int) -> list:
        """One value inside each bin of feature ``j``."""
        e = self.edges[j]
        out = []
        for k in range(len(e) - 1):
            lo, hi = e[k], e[k + 1]
            if math.isinf(lo) and math.isinf(hi):
                out.append(0.0)
            elif math.isinf(lo):
                out.append(hi - 1.0)
            else:
                out.append(hi if not math.isinf(hi) else lo + 1.0)
        return out


def gam_score(g: GamModel, x) -> float:
    """Linear score of a raw vector; summed with ``math.fsum`` so it is order independent."""
    terms = [g.intercept]
    for j in range(g.p):
        terms.append(g.weights[j][g.bin_index(j, x[j])])
    return math.fsum(terms)


def _bin_conditions(g: GamModel, j: int, k: int) -> list:
    lo, hi = g.edges[j][k], g.edges[j][k + 1]
    conds = []
    if not math.isinf(lo):
        conds.append(Condition(j, GT, lo))
    if not math.isinf(hi):
        conds.append(Condition(j, LE, hi))
    return conds


def expansion_order(g: GamModel) -> list:
    """Features by descending weight range; ties keep feature order."""
    spans = [max(w) - min(w) for w in g.weights]
    return sorted(range(g.p), key=lambda j: (-spans[j], j))


def gam_to_decision_set(g: GamModel, tau: float | None = None, *, early_stop: bool = True,
                        leaf_cap: int = 10**6, order: Sequence[int] | None = None) -> DecisionSet:
    """Convert a step-function GAM into an equivalent decision set.

    Features are expanded depth-first as a multi-split tree.  A branch
    closes as soon as every completion of its partial bin assignment has
    the same prediction; positive leaves become rules.
    """
    tau = g.tau if tau is None else float(tau)
    order = list(expansion_order(g) if order is None else order)
    # single-bin features are constant and never need a split
    consts = [g.intercept] + [g.weights[j][0] for j in order if len(g.weights[j]) == 1]
    order = [j for j in order if len(g.weights[j]) > 1]
    mins = [min(w) for w in g.weights]
    maxs = [max(w) for w in g.weights]
    rules: list = []
    leaves = 0

    def close():
        nonlocal leaves
        leaves += 1
        if leaves > leaf_cap:
            raise ValueError(f"GAM conversion exceeded {leaf_cap} leaves; use coarser bins "
                             f"or raise leaf_cap")

    def visit(depth: int, path_w: list, path_c: list):
        rest = order[depth:]
        if depth == len(order):
            close()
            if math.fsum([*consts, *path_w]) > tau:
                rules.append(list(path_c))
            return
        if early_stop:
            if math.fsum([*consts, *path_w, *(maxs[j] for j in rest)]) <= tau:
                close()
                return
            # the root is always split so every rule carries a condition
            if depth > 0 and math.fsum([*consts, *path_w, *(mins[j] for j in rest)]) > tau:
                close()
                rules.append(list(path_c))
                return
        j = order[depth]
        for k, w in enumerate(g.weights[j]):
            visit(depth + 1, path_w + [w], path_c + _bin_conditions(g, j, k))

    visit(0, [], [])
    vocab = set()
    for r in rules:
        if not r:
            raise ValueError("GAM is positive everywhere and has no binned feature; "
                             "it has no decision-set form with non-empty rules")
        for c in r:
            vocab.add(c)
            vocab.add(c.negated())
    conditions = sorted(vocab, key=Condition.sort_key)
    index = {c: i for i, c in enumerate(conditions)}
    return DecisionSet(g.schema, tuple(conditions),
                       tuple(Rule(tuple(index[c] for c in r)) for r in rules),
                       {"source": "gam", "tau": tau})


# ---------------------------------------------------------------------------
# JSON model files

def model_to_dict(model, metadata: dict | None = None) -> dict:
    meta = dict(model.metadata)
    meta.update(metadata or {})
    doc = {"format": FORMAT, "version": VERSION}
    if isinstance(model, DecisionSet):
        doc.update({
            "kind": "decision_set",
            "features": model.schema.to_list(),
            "conditions": [c.to_dict(model.schema) for c in model.conditions],
            "rules": [list(r.conditions) for r in model.rules],
        })
    elif isinstance(model, GamModel):
        doc.update({
            "kind": "gam",
            "features": model.schema.to_list(),
            "intercept": model.intercept,
            "shapes": [{"feature": model.schema[j].name,
                        "edges": list(model.edges[j][1:-1]),
                        "weights": list(model.weights[j])} for j in range(model.p)],
            "link": model.link,
            "tau": model.tau,
        })
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    doc["metadata"] = meta
    return doc


def model_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model file version {doc.get('version')!r}")
    kind = doc.get("kind")
    try:
        schema = FeatureSchema.from_list(doc["features"])
        if kind == "decision_set":
            conditions = [Condition.from_dict(c, schema) for c in doc["conditions"]]
            m = len(conditions)
            for i, r in enumerate(doc["rules"]):
                for j in r:
                    if not isinstance(j, int) or not 0 <= j < m:
                        raise ModelFormatError(f"rule {i} references undefined condition id {j}")
            return DecisionSet(schema, tuple(conditions), tuple(tuple(r) for r in doc["rules"]),
                               dict(doc.get("metadata", {})))
        if kind == "gam":
            shapes = {s["feature"]: s for s in doc["shapes"]}
            missing = [n for n in schema.names if n not in shapes]
            if missing:
                raise ModelFormatError(f"GAM has no shape function for {missing}")
            return GamModel.from_interior(
                schema, doc["intercept"],
                [shapes[n]["edges"] for n in schema.names],
                [shapes[n]["weights"] for n in schema.names],
                tau=doc.get("tau", 0.0), link=doc.get("link", IDENTITY),
                metadata=dict(doc.get("metadata", {})))
    except KeyError as exc:
        raise ModelFormatError(f"model file missing field {exc.args[0]!r}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model, path=None, metadata: dict | None = None) -> dict:
    doc = model_to_dict(model, metadata)
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return doc


def load_model(source):
    """Load a model from a path, a JSON string, or an already-parsed dict."""
    if isinstance(source, dict):
        return model_from_dict(source)
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        raise FileNotFoundError(f"no such model file: {source}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model JSON: {exc}") from None
    return model_from_dict(doc)
