"""
Faithful explanations for a decision set
========================================

Every explanation contains a complete rule of the model, so it can never
capture a negative row.  The optimized methods add true conditions of the
query so that as few training rows as possible fit the explanation.
"""

import numpy as np

from faithful_defense.dataset import BinarizationPolicy, RawDataset, binarize
from faithful_defense.defense import Defender, DefenseConfig, METHODS, verify_faithful
from faithful_defense.models import load_model

f = load_model("tests/fixtures/three_rule_model.json")
rng = np.random.default_rng(1)
X = np.column_stack([rng.integers(0, 20001, 2000), rng.integers(18, 91, 2000),
                     rng.integers(0, 3, 2000)]).astype(float)
data = binarize(RawDataset(f.schema, X, f.predict_raw(X)), BinarizationPolicy(quantiles=8),
                include=f.all_conditions())
f = f.bind(data)
print(f"{data.n} rows, {data.m} conditions, {int(f.predict_binary(data.matrix).sum())} positive")

q = np.array([4000.0, 22.0, 0.0])       # income 4000, age 22, renting
for method in METHODS:
    d = Defender(f, data, DefenseConfig(method, l=3, seed=0))
    a = d.answer(q)
    if a.explanation is None:
        print(f"{method:>9}: label {a.label}, no explanation")
        continue
    e = a.explanation
    print(f"{method:>9}: label {a.label}, supp {e.supp:4d}, faithful {verify_faithful(e, f, q)}")
    print("           ", data.describe(e.conditions))

# a second query inside the first explanation gets the same explanation back
d = Defender(f, data, DefenseConfig("exact", l=3))
first = d.answer(q).explanation
again = d.answer(q + np.array([1.0, 0.0, 0.0]))
print("\nreused:", again.reused, "same object:", again.explanation is first, "history", len(d.history))
