import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faithful_defense.bitset import CoverageSet
from faithful_defense.coverage import (CoverageInstance, brute_force, build_instance, exact,
                                       greedy, n_subsets)
from faithful_defense.dataset import (GT, LE, BinarizationPolicy, Condition, Feature,
                                      FeatureSchema, RawDataset, binarize, cap, support)

from conftest import random_binarized

GREEDY_RATIO = 1 - 1 / math.e


def oracle_optimum(sets, l):
    """Largest union over subsets of at most l plain Python sets."""
    best = 0
    for size in range(min(l, len(sets)) + 1):
        for combo in itertools.combinations(sets, size):
            best = max(best, len(set().union(*combo)))
    return best


def random_sets(rng, n_max=200, k_max=18):
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(1, k_max + 1))
    density = rng.uniform(0.02, 0.4)
    return n, [set(np.flatnonzero(rng.random(n) < density).tolist()) for _ in range(k)]


def test_build_instance_set_difference():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [9.0, 1.0]])
    schema = FeatureSchema((Feature("x"), Feature("z"))).resolve_bounds(X)
    data = binarize(RawDataset(schema, X, np.zeros(3)), BinarizationPolicy(thresholds={"x": [5]}))
    le5 = data.index[Condition(0, LE, 5)]
    gt5 = data.index[Condition(0, GT, 5)]
    base = CoverageSet.all(3)
    inst = build_instance(base, [le5, gt5], data)
    assert set(inst.column(le5)) == {2}
    # restricted to rows where x > 5 holds everywhere, its column is empty
    inst = build_instance(CoverageSet.from_indices([2], 3), [gt5], data)
    assert inst.columns == (0,)


def test_build_instance_row_loop_oracle(rng):
    data = random_binarized(rng, n=150, n_cont=5, n_cat=2)
    base_ids = [int(i) for i in rng.choice(data.n, size=60, replace=False)]
    base = CoverageSet.from_indices(base_ids, data.n)
    cands = rng.choice(data.m, size=10, replace=False).tolist()
    inst = build_instance(base, cands, data)
    for j in cands:
        expect = {i for i in base_ids if not data.conditions[j].holds(data.X[i])}
        assert set(inst.column(j)) == expect


def test_greedy_examples():
    inst = CoverageInstance.from_sets([{0, 1, 2}, {3}, {0, 1}])
    assert greedy(inst, 0).selected == () and greedy(inst, 0).covered == 0
    sol = greedy(inst, 2)
    assert sol.selected == (0, 1) and sol.covered == 4 and not sol.optimal


def test_greedy_trap_solved_by_exact():
    # rows: a=0, b=1..2, c=3..4, d=5
    a, b, c, d = {0}, {1, 2}, {3, 4}, {5}
    inst = CoverageInstance.from_sets([a | b, c | d, b | c])
    g, e, bf = greedy(inst, 2), exact(inst, 2), brute_force(inst, 2)
    assert g.covered == 5
    assert e.covered == bf.covered == oracle_optimum([a | b, c | d, b | c], 2) == 6
    assert e.optimal and set(e.selected) == {0, 1}


def test_single_candidate():
    assert exact(CoverageInstance.from_sets([{1, 2}], n=4), 1).selected == (0,)
    empty = exact(CoverageInstance.from_sets([set()], n=4), 1)
    assert empty.selected == () and empty.covered == 0 and empty.optimal


def test_brute_force_counts_and_cap():
    inst = CoverageInstance.from_sets([{0}, {1}])
    assert brute_force(inst, 2).nodes == 4
    assert brute_force(inst, 0).covered == 0
    assert n_subsets(30, 15) > 2_000_000
    with pytest.raises(ValueError):
        brute_force(CoverageInstance.from_sets([{i} for i in range(30)]), 15)


def test_brute_force_lexicographic_tie():
    inst = CoverageInstance.from_sets([{0}, {1}, {0}])
    assert brute_force(inst, 1).selected == (0,)


def test_zero_budget_exact():
    sol = exact(CoverageInstance.from_sets([{0, 1}]), 0)
    assert sol.selected == () and sol.optimal


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_solvers_against_subset_oracle(seed, l):
    rng = np.random.default_rng(seed)
    n, sets = random_sets(rng)
    inst = CoverageInstance.from_sets(sets, n=n)
    opt = oracle_optimum(sets, l)
    e, g, bf = exact(inst, l), greedy(inst, l), brute_force(inst, l)
    assert bf.covered == opt
    assert e.optimal and e.covered == opt and len(e.selected) <= l
    assert g.covered >= GREEDY_RATIO * opt and len(g.selected) <= l
    for sol in (e, g, bf):
        union = set().union(*(sets[i] for i in sol.selected))
        assert sol.covered == len(union) == bin(sol.covered_bits).count("1")


def test_node_limit_returns_flagged_incumbent(rng):
    n, sets = 200, [set(np.flatnonzero(rng.random(200) < 0.2).tolist()) for _ in range(18)]
    inst = CoverageInstance.from_sets(sets, n=n)
    sol = exact(inst, 4, node_limit=3)
    assert not sol.optimal
    assert sol.covered >= greedy(inst, 4).covered


def test_monotone_and_submodular(rng):
    for _ in range(30):
        n, sets = random_sets(rng, 100, 10)
        order = rng.permutation(len(sets))
        covered, gains = set(), []
        for i in order:
            new = covered | sets[i]
            gains.append(len(new) - len(covered))
            assert len(new) >= len(covered)
            covered = new
        # gain of a fixed set never grows as the covered set grows
        probe = sets[0]
        prev = None
        acc = set()
        for i in order:
            acc |= sets[i]
            g = len(probe - acc)
            assert prev is None or g <= prev
            prev = g


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_duality_with_dataset_support(seed, l):
    rng = np.random.default_rng(seed)
    data = random_binarized(rng, n=120, n_cont=5, n_cat=2)
    row = data.row(int(rng.integers(data.n)))
    true_ids = np.flatnonzero(row).tolist()
    rng.shuffle(true_ids)
    e_base, cq = true_ids[:2], true_ids[2:]
    _, base = support(e_base, data)
    inst = build_instance(base, cq, data)
    for sol in (greedy(inst, l), exact(inst, l), brute_force(inst, l)):
        cnt, _ = support(list(e_base) + list(sol.selected), data)
        rows = sum(cap(list(e_base) + list(sol.selected), data.row(i)) for i in range(data.n))
        assert cnt == rows == base.count - sol.covered
