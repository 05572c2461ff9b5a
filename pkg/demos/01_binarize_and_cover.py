"""
Conditions, supports and the coverage view of an explanation
============================================================

A toy credit table is turned into binary conditions.  Then we look at how
adding conditions to a rule shrinks the set of training rows it captures.
"""

import numpy as np

from faithful_defense.coverage import brute_force, build_instance, exact, greedy
from faithful_defense.dataset import (BinarizationPolicy, Feature, FeatureSchema, RawDataset,
                                      binarize, satisfied_conditions, support)

rng = np.random.default_rng(0)
n = 12
X = np.column_stack([rng.integers(1, 10, n) * 1000, rng.integers(18, 70, n),
                     rng.integers(0, 3, n)]).astype(float)
schema = FeatureSchema((Feature("income"), Feature("age"),
                        Feature("housing", "categorical", ("rent", "own", "free"))))
raw = RawDataset(schema.resolve_bounds(X), X, np.zeros(n))

# explicit thresholds for income, 3 quantile cuts for age
data = binarize(raw, BinarizationPolicy(quantiles=3, thresholds={"income": [5000]}))
for j, c in enumerate(data.conditions):
    print(j, c.describe(schema), sorted(data.col(j)))

# a "rule": income <= 5000.  Its support is the rows it captures.
rule = [data.index[c] for c in data.conditions if c.describe(schema) == "income <= 5000"]
count, rows = support(rule, data)
print("\nrule", data.describe(rule), "captures", count, "rows:", sorted(rows))

# the query's other true conditions are the candidates we may append
q = X[int(sorted(rows)[0])]
cq = sorted(satisfied_conditions(q, data) - set(rule))
print("query", q, "also satisfies", [data.conditions[j].describe(schema) for j in cq])

# each candidate "covers" the captured rows where it is false
inst = build_instance(rows, cq, data)
for j in cq:
    print(f"  {data.conditions[j].describe(schema):>20}  removes rows {sorted(inst.column(j))}")

for l in (1, 2, 3):
    g, e, b = greedy(inst, l), exact(inst, l), brute_force(inst, l)
    print(f"l={l}: greedy removes {g.covered}, exact removes {e.covered} "
          f"(brute force {b.covered}); support left {count - e.covered}")
