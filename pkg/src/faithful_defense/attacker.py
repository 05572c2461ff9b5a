"""Model-extraction attacker: query strategies and the combined surrogate predictor.

The attacker knows each feature's marginal distribution, sees labels, and
reads released explanations as lists of conditions.  It never sees the
protected model or the defender's training data.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cart import ConstantModel, train_cart
from .dataset import EQ, GT, LE, NE, ConditionTable, FeatureSchema, RawDataset
from .defense import Explanation

RANDOM = "random"
COMMITTEE = "committee"
PERTURBATION = "perturbation"
STRATEGIES = (RANDOM, COMMITTEE, PERTURBATION)


@dataclass
class MarginalModel:
    """Independent per-feature marginals.

    Categorical features keep category probabilities; continuous ones keep
    an equal-mass quantile table and the data's value precision.
    """

    schema: FeatureSchema
    probs: dict = field(default_factory=dict)
    quantiles: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)

    def __post_init__(self):
        for j, p in self.probs.items():
            p = np.asarray(p, dtype=float)
            if p.min() < 0 or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
                raise ValueError(f"feature {j}: category probabilities must sum to 1")
            self.probs[j] = p / p.sum()
        for j, q in self.quantiles.items():
            self.quantiles[j] = np.maximum.accumulate(np.asarray(q, dtype=float))

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        p = len(self.schema)
        out = np.empty((size, p))
        for j, f in enumerate(self.schema):
            if f.is_categorical:
                out[:, j] = rng.choice(len(f.categories), size=size, p=self.probs[j])
            else:
                q = self.quantiles[j]
                u = rng.random(size) * (len(q) - 1)
                v = np.interp(u, np.arange(len(q)), q)
                step = self.precision.get(j, 0.0)
                if step > 0:
                    v = q[0] + np.round((v - q[0]) / step) * step
                out[:, j] = np.clip(v, q[0], q[-1])
        return out

    def to_dict(self) -> dict:
        feats = []
        for j, f in enumerate(self.schema):
            if f.is_categorical:
                feats.append({"name": f.name, "kind": f.kind,
                              "probs": dict(zip(f.categories, self.probs[j].tolist()))})
            else:
                feats.append({"name": f.name, "kind": f.kind,
                              "quantiles": self.quantiles[j].tolist(),
                              "precision": self.precision.get(j, 0.0)})
        return {"features": feats}

    @classmethod
    def from_dict(cls, doc: dict, schema: FeatureSchema) -> "MarginalModel":
        probs, quants, prec = {}, {}, {}
        for d in doc["features"]:
            j = schema.index(d["name"])
            f = schema[j]
            if f.is_categorical:
                probs[j] = [float(d["probs"].get(c, 0.0)) for c in f.categories]
            else:
                quants[j] = d["quantiles"]
                prec[j] = float(d.get("precision", 0.0))
        return cls(schema, probs, quants, prec)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, schema: FeatureSchema) -> "MarginalModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), schema)


def value_precision(values: np.ndarray) -> float:
    """Smallest positive gap between distinct values (0 for a constant column)."""
    u = np.unique(values)
    if len(u) < 2:
        return 0.0
    return float(np.diff(u).min())


def estimate_marginals(raw: RawDataset, n_quantiles: int = 101) -> MarginalModel:
    probs, quants, prec = {}, {}, {}
    levels = np.linspace(0.0, 1.0, n_quantiles)
    for j, f in enumerate(raw.schema):
        col = raw.X[:, j]
        if f.is_categorical:
            counts = np.bincount(col.astype(int), minlength=len(f.categories)).astype(float)
            probs[j] = counts / counts.sum()
        else:
            quants[j] = np.quantile(col, levels)
            prec[j] = value_precision(col)
    return MarginalModel(raw.schema, probs, quants, prec)


# ---------------------------------------------------------------------------
# explanation bookkeeping on the attacker side

def explanation_features(e: Explanation, conditions: Sequence) -> list:
    return sorted({conditions[j].feature for j in e.conditions})


@dataclass
class ImportanceCounts:
    counts: np.ndarray

    @classmethod
    def zeros(cls, p: int) -> "ImportanceCounts":
        return cls(np.zeros(p, dtype=np.int64))

    def add(self, e: Explanation, conditions: Sequence) -> None:
        for j in explanation_features(e, conditions):
            self.counts[j] += 1

    def __getitem__(self, j) -> int:
        return int(self.counts[j])


def update_importance(E: Iterable[Explanation], conditions: Sequence, p: int) -> ImportanceCounts:
    """Number of explanations mentioning each feature."""
    counts = ImportanceCounts.zeros(p)
    for e in E:
        counts.add(e, conditions)
    return counts


class KnownExplanations:
    """The attacker's copy of the released explanations (deduplicated)."""

    def __init__(self, table: ConditionTable):
        self.table = table
        self.items: list = []
        self._keys: set = set()
        # row e of the membership matrix marks the conditions of explanation e
        self._member = np.zeros((0, len(table)))
        self._sizes = np.zeros(0)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def add(self, e: Explanation) -> bool:
        key = e.conditions
        if key in self._keys:
            return False
        self._keys.add(key)
        self.items.append(e)
        row = np.zeros((1, len(self.table)))
        row[0, list(key)] = 1
        self._member = np.vstack([self._member, row])
        self._sizes = np.append(self._sizes, len(key))
        return True

    def covered_matrix(self, M: np.ndarray) -> np.ndarray:
        """Row-wise ``cap(E, x)`` from an evaluated condition matrix."""
        if not self.items:
            return np.zeros(len(M), dtype=bool)
        hits = M.astype(float) @ self._member.T  # float for BLAS; counts stay exact
        return (hits == self._sizes).any(axis=1)

    def covered(self, X: np.ndarray) -> np.ndarray:
        """Row-wise ``cap(E, x)`` for raw rows."""
        X = np.atleast_2d(X)
        if not self.items:
            return np.zeros(len(X), dtype=bool)
        return self.covered_matrix(self.table.evaluate(X))

    def covers_mask(self, qmask: int) -> bool:
        return any(e.mask & ~qmask == 0 for e in self.items)


def _key(q: np.ndarray) -> tuple:
    return tuple(float(v) for v in q)


def draw_outside(marginals: MarginalModel, E: KnownExplanations, asked: set,
                 rng: np.random.Generator, n: int = 1, max_tries: int = 10_000,
                 batch: int = 64):
    """Up to ``n`` marginal draws that are unasked and outside every explanation.

    Returns ``(draws, fallback)``.  When ``max_tries`` draws do not yield
    ``n`` valid ones, the list is topped up with the last raw draw and
    ``fallback`` is True.
    """
    tries = 0
    last = None
    out = []
    while tries < max_tries and len(out) < n:
        size = min(batch, max_tries - tries)
        Q = marginals.sample(rng, size)
        inside = E.covered(Q)
        for i in range(size):
            tries += 1
            q = Q[i]
            last = q
            if inside[i] or _key(q) in asked:
                continue
            out.append(q)
            if len(out) == n:
                break
    fallback = len(out) < n
    while len(out) < n:
        out.append(last)
    return out, fallback


def random_query(marginals: MarginalModel, E: KnownExplanations, asked: set,
                 rng: np.random.Generator, max_tries: int = 10_000):
    """One unasked draw outside all explanations: ``(query, fallback)``."""
    draws, fallback = draw_outside(marginals, E, asked, rng, 1, max_tries)
    return draws[0], fallback


class Committee:
    """Bootstrap CART committee; disagreement is the fraction of member pairs that differ."""

    def __init__(self, trees: list):
        if len(trees) < 2:
            raise ValueError("a committee needs at least two hypotheses")
        self.trees = trees

    @classmethod
    def train(cls, X, y, h: int, rng: np.random.Generator, max_depth: int = 5,
              categorical=None) -> "Committee":
        X, y = np.asarray(X), np.asarray(y)
        trees = []
        for _ in range(h):
            idx = rng.integers(0, len(y), size=len(y))
            trees.append(train_cart(X[idx], y[idx], max_depth, categorical=categorical))
        return cls(trees)

    def disagreement(self, X) -> np.ndarray:
        votes = np.stack([t.predict(X) for t in self.trees]).astype(int)
        h = len(self.trees)
        v = votes.sum(axis=0)
        return v * (h - v) / (h * (h - 1) / 2)


def committee_query(candidates: np.ndarray, committee: Committee | None):
    """Index of the candidate with the highest committee disagreement (first on ties)."""
    if committee is None or len(candidates) == 0:
        return 0
    d = committee.disagreement(candidates)
    return int(np.argmax(d))


def _escape_values(q, j, e_conds, feature, delta, lo, hi):
    """Values of feature ``j`` just outside the explanation's bounds."""
    if feature.is_categorical:
        ncat = len(feature.categories)
        if ncat < 2:
            return []
        eq = [c for c in e_conds if c.op == EQ]
        if eq:
            v = q[j] + 1 if q[j] + 1 <= ncat - 1 else q[j] - 1
            return [float(v)]
        ne = [c for c in e_conds if c.op == NE]
        return [ne[0].value] if ne else []
    out = []
    upper = [c.value for c in e_conds if c.op == LE]
    lower = [c.value for c in e_conds if c.op == GT]
    step = delta if delta > 0 else 1.0
    if lower:
        t = max(lower)
        v = math.floor(t / step) * step
        if v > t:
            v -= step
        out.append(min(max(v, lo), hi))
    if upper:
        t = min(upper)
        v = (math.floor(t / step) + 1) * step
        if v <= t:
            v += step
        out.append(min(max(v, lo), hi))
    return out


def perturbation_queries(q, e: Explanation, counts: ImportanceCounts, k: int, delta,
                         schema: FeatureSchema, conditions: Sequence) -> list:
    """Candidate queries that step just outside ``e`` along its top-``k`` features.

    ``delta`` is a scalar or a per-feature mapping.  Continuous values snap
    to the ``delta`` grid: an upper bound ``<= t`` moves to the first grid
    value above ``t``, a lower bound ``> t`` to the last grid value at or
    below ``t``.  Returns ``(candidate, feature)`` pairs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=float)
    feats = explanation_features(e, conditions)
    feats.sort(key=lambda j: (-counts[j], j))
    out = []
    for j in feats[:k]:
        f = schema[j]
        e_conds = [conditions[i] for i in e.conditions if conditions[i].feature == j]
        d = delta.get(j, 1.0) if isinstance(delta, dict) else float(delta)
        lo, hi = f.bounds if f.bounds is not None else (-math.inf, math.inf)
        for v in _escape_values(q, j, e_conds, f, d, lo, hi):
            cand = q.copy()
            cand[j] = v
            out.append((cand, j))
    return out


class QueryPool:
    """Pending perturbation candidates, served by current importance of the
    perturbed feature (descending) and insertion order within ties."""

    def __init__(self, p: int):
        self.queues = [deque() for _ in range(p)]
        self._seq = 0
        self._pending: set = set()

    def __len__(self):
        return sum(len(d) for d in self.queues)

    def push(self, q: np.ndarray, feature: int, source: int | None, asked: set) -> bool:
        key = _key(q)
        if key in asked or key in self._pending:
            return False
        self._pending.add(key)
        self.queues[feature].append((self._seq, q, source))
        self._seq += 1
        return True

    def pop(self, counts: ImportanceCounts):
        best = None
        for j, d in enumerate(self.queues):
            if not d:
                continue
            key = (-counts[j], d[0][0])
            if best is None or key < best[0]:
                best = (key, j)
        if best is None:
            return None
        seq, q, source = self.queues[best[1]].popleft()
        self._pending.discard(_key(q))
        return q, best[1], source


@dataclass
class AttackerConfig:
    strategy: str = PERTURBATION
    seed: int = 0
    k: int = 2
    delta: float | None = None
    committee_size: int = 5
    candidates: int = 32
    retrain_every: int = 50
    max_depth: int = 5
    max_tries: int = 10_000

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown attacker strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.committee_size < 2:
            raise ValueError("committee_size must be >= 2")


class Attacker:
    """Generates queries and absorbs (label, explanation) answers."""

    def __init__(self, config: AttackerConfig, marginals: MarginalModel, table: ConditionTable):
        self.config = config
        self.marginals = marginals
        self.schema = marginals.schema
        self.table = table
        self.conditions = table.conditions
        self.rng = np.random.default_rng(config.seed)
        p = len(self.schema)
        self.E = KnownExplanations(table)
        self.asked: set = set()
        self.Q: list = []
        self.labels: list = []
        self.counts = ImportanceCounts.zeros(p)
        self.pool = QueryPool(p)
        self.committee: Committee | None = None
        if config.delta is None:
            self.delta = {j: (marginals.precision.get(j) or 1.0) for j in range(p)}
        else:
            self.delta = float(config.delta)
        self.fallbacks = 0

    def _random(self):
        q, fallback = random_query(self.marginals, self.E, self.asked, self.rng,
                                   self.config.max_tries)
        self.fallbacks += fallback
        return q, {"source": "random", "fallback": bool(fallback)}

    def next_query(self):
        """Return ``(query, provenance)``."""
        s = self.config.strategy
        if s == PERTURBATION:
            while True:
                item = self.pool.pop(self.counts)
                if item is None:
                    return self._random()
                q, feat, src = item
                if _key(q) in self.asked:
                    continue
                if self.E.covered(q)[0]:
                    continue
                return q, {"source": "perturbation", "feature": feat, "from": src}
        if s == COMMITTEE and self.committee is not None:
            cands, fallback = draw_outside(self.marginals, self.E, self.asked, self.rng,
                                           self.config.candidates, self.config.max_tries)
            self.fallbacks += fallback
            i = committee_query(np.array(cands), self.committee)
            return cands[i], {"source": "committee", "rank": i, "fallback": bool(fallback)}
        return self._random()

    def observe(self, q, label: int, e: Explanation | None) -> None:
        q = np.asarray(q, dtype=float)
        qid = len(self.Q)
        self.asked.add(_key(q))
        self.Q.append(q)
        self.labels.append(int(label))
        if e is not None:
            if self.E.add(e):
                self.counts.add(e, self.conditions)
            if self.config.strategy == PERTURBATION:
                for cand, feat in perturbation_queries(q, e, self.counts, self.config.k,
                                                       self.delta, self.schema, self.conditions):
                    self.pool.push(cand, feat, qid, self.asked)
        if (self.config.strategy == COMMITTEE
                and len(self.labels) % self.config.retrain_every == 0):
            self.committee = Committee.train(
                np.array(self.Q), np.array(self.labels), self.config.committee_size, self.rng,
                self.config.max_depth, self.schema.categorical_mask)

    def train_surrogate(self, max_depth: int | None = None):
        if not self.Q:
            return ConstantModel(0)
        return train_cart(np.array(self.Q), np.array(self.labels),
                          max_depth or self.config.max_depth,
                          categorical=self.schema.categorical_mask)


def surrogate_predict(E, tree, X, table: ConditionTable | None = None) -> np.ndarray:
    """Positive if any released explanation covers the row, else the tree's label."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(E, KnownExplanations):
        covered = E.covered(X)
    else:
        E = list(E)
        covered = np.zeros(len(X), dtype=bool)
        if E:
            M = table.evaluate(X)
            for e in E:
                covered |= M[:, list(e.conditions)].all(axis=1)
    return (covered | (np.asarray(tree.predict(X)) == 1)).astype(np.int8)
