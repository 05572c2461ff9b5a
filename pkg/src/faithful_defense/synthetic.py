"""Synthetic credit-style data labelled by a planted decision set."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import (CATEGORICAL, CONTINUOUS, EQ, GT, LE, Condition, Feature, FeatureSchema,
                      RawDataset, save_csv)
from .models import DecisionSet, Rule, save_model


@dataclass
class SyntheticSpec:
    n: int = 1000
    p: int = 10
    rules: int = 3
    min_rule_len: int = 2
    max_rule_len: int = 3
    positive_rate: float = 0.3
    categorical_fraction: float = 0.2
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n < 10 or self.p < 1 or self.rules < 1:
            raise ValueError("need n >= 10, p >= 1 and at least one rule")
        if not 1 <= self.min_rule_len <= self.max_rule_len <= self.p:
            raise ValueError("rule lengths must satisfy 1 <= min <= max <= p")
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


def _continuous_column(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        hi = int(rng.integers(40, 400))
        return rng.integers(0, hi + 1, size=n).astype(float)
    if kind == 1:
        mu = float(rng.uniform(30, 70))
        return np.clip(np.round(rng.normal(mu, mu / 4, size=n)), 0, None)
    scale = float(rng.choice([10, 100]))
    return np.round(rng.lognormal(mean=3.0, sigma=0.6, size=n) * scale / 10) * 10


def _features(spec: SyntheticSpec, rng):
    n_cat = int(round(spec.categorical_fraction * spec.p))
    cat_idx = set(rng.choice(spec.p, size=n_cat, replace=False).tolist())
    cols, feats = [], []
    for j in range(spec.p):
        if j in cat_idx:
            k = int(rng.integers(3, 6))
            probs = rng.dirichlet(np.full(k, 2.0))
            cols.append(rng.choice(k, size=spec.n, p=probs).astype(float))
            feats.append(Feature(f"c{j}", CATEGORICAL, tuple(f"v{i}" for i in range(k))))
        else:
            col = _continuous_column(rng, spec.n)
            if col.min() == col.max():
                col[0] += 1
            cols.append(col)
            feats.append(Feature(f"x{j}", CONTINUOUS, bounds=(float(col.min()), float(col.max()))))
    return np.column_stack(cols), FeatureSchema(tuple(feats))


def _plant(spec, rng, X, schema):
    """Random rule skeletons: (feature, direction or category) per condition."""
    skeleton = []
    for _ in range(spec.rules):
        L = int(rng.integers(spec.min_rule_len, spec.max_rule_len + 1))
        feats = sorted(rng.choice(spec.p, size=L, replace=False).tolist())
        conds = []
        for j in feats:
            if schema[j].is_categorical:
                freq = np.bincount(X[:, j].astype(int), minlength=len(schema[j].categories))
                conds.append((j, EQ, int(np.argmax(freq * rng.uniform(0.5, 1.0, len(freq))))))
            else:
                conds.append((j, LE if rng.random() < 0.5 else GT, None))
        skeleton.append(conds)
    return skeleton


def _realise(skeleton, X, s):
    """Conditions for coverage scale ``s``; each rule covers roughly ``s`` of the data."""
    rules = []
    for conds in skeleton:
        n_cont = sum(v is None for _, _, v in conds) or 1
        c = s ** (1.0 / n_cont)
        out = []
        for j, op, v in conds:
            if v is not None:
                out.append(Condition(j, op, v))
                continue
            u = np.unique(X[:, j])
            mids = (u[:-1] + u[1:]) / 2
            level = c if op == LE else 1 - c
            t = np.quantile(X[:, j], level)
            i = int(np.clip(np.searchsorted(mids, t), 0, len(mids) - 1))
            out.append(Condition(j, op, mids[i]))
        rules.append(out)
    return rules


def _labels(rules, X):
    y = np.zeros(len(X), dtype=bool)
    for r in rules:
        hit = np.ones(len(X), dtype=bool)
        for c in r:
            hit &= _holds(c, X)
        y |= hit
    return y


def _holds(c: Condition, X):
    v = X[:, c.feature]
    return {LE: v <= c.value, GT: v > c.value, EQ: v == c.value}.get(c.op, v != c.value)


def generate_synthetic(spec: SyntheticSpec, seed: int):
    """Return ``(train, test, model)``.

    Feature marginals are independent.  Rule thresholds are scaled by
    bisection so the planted positive rate matches ``spec.positive_rate``.
    """
    rng = np.random.default_rng(seed)
    X, schema = _features(spec, rng)
    skeleton = _plant(spec, rng, X, schema)
    lo, hi = 1e-4, 1.0
    for _ in range(40):
        mid = (lo + hi) / 2
        rate = _labels(_realise(skeleton, X, mid), X).mean()
        if rate < spec.positive_rate:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda s: abs(_labels(_realise(skeleton, X, s), X).mean()
                                           - spec.positive_rate))
    rules = _realise(skeleton, X, best)
    vocab = sorted({c for r in rules for c in r}, key=Condition.sort_key)
    index = {c: i for i, c in enumerate(vocab)}
    model = DecisionSet(schema, tuple(vocab), tuple(Rule(tuple(index[c] for c in r)) for r in rules),
                        {"name": "synthetic", "seed": int(seed), "provenance": "planted",
                         "spec": spec.to_dict()})
    y = model.predict_raw(X)
    perm = rng.permutation(spec.n)
    n_test = int(round(spec.test_fraction * spec.n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    full = RawDataset(schema, X, y)
    return full.subset(train_idx), full.subset(test_idx), model


def write_synthetic(spec: SyntheticSpec, seed: int, outdir) -> dict:
    """Write ``train.csv``, ``test.csv`` and ``model.json``; return their paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, model = generate_synthetic(spec, seed)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "model": out / "model.json"}
    save_csv(paths["train"], train)
    save_csv(paths["test"], test)
    save_model(model, paths["model"])
    return paths
