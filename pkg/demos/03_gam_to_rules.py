"""
From a step-function GAM to a decision set
==========================================

A GAM with piecewise-constant shape functions is expanded as a tree over
bins; whole subtrees are closed as soon as their prediction is settled.
"""

import itertools

import numpy as np

from faithful_defense.dataset import Feature, FeatureSchema
from faithful_defense.models import GamModel, gam_score, gam_to_decision_set

schema = FeatureSchema((Feature("income"), Feature("debt"), Feature("age")))
g = GamModel.from_interior(
    schema, intercept=-0.5,
    interior_edges=[[3000, 6000, 9000], [500, 2000], [25, 60]],
    weights=[[-1.0, -0.2, 0.4, 1.1], [0.6, 0.0, -1.5], [-0.3, 0.1, 0.0]],
    tau=0.0)

fast = gam_to_decision_set(g)
full = gam_to_decision_set(g, early_stop=False)
print(f"early stopping: {len(fast.rules)} rules; full depth: {len(full.rules)} rules")
for i in range(len(fast.rules)):
    print("  ", " AND ".join(c.describe(schema) for c in fast.rule_conditions(i)))

grid = np.array(list(itertools.product(*(g.representatives(j) for j in range(3)))))
want = np.array([int(gam_score(g, x) > g.tau) for x in grid])
print("agrees with the GAM on all", len(grid), "bin combinations:",
      np.array_equal(fast.predict_raw(grid), want))
