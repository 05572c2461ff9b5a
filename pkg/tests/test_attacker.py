import numpy as np
import pytest

from faithful_defense.attacker import (Attacker, AttackerConfig, Committee, ImportanceCounts,
                                       KnownExplanations, MarginalModel, QueryPool,
                                       committee_query, estimate_marginals,
                                       perturbation_queries, random_query, surrogate_predict,
                                       update_importance, value_precision)
from faithful_defense.cart import ConstantModel, train_cart
from faithful_defense.dataset import (CATEGORICAL, EQ, GT, LE, Condition, ConditionTable,
                                      Feature, FeatureSchema, RawDataset)
from faithful_defense.defense import Explanation

SCHEMA = FeatureSchema((Feature("income", bounds=(0, 20000)), Feature("age", bounds=(18, 90)),
                        Feature("home", CATEGORICAL, ("rent", "own", "free"))))
CONDS = (Condition(0, LE, 5000), Condition(0, GT, 5000), Condition(1, LE, 30),
         Condition(1, GT, 20), Condition(2, EQ, 1), Condition(1, GT, 30), Condition(1, LE, 20))
TABLE = ConditionTable(CONDS)


def _marginals():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 20001, 500), rng.integers(18, 91, 500),
                         rng.integers(0, 3, 500)]).astype(float)
    return estimate_marginals(RawDataset(SCHEMA, X, np.zeros(500)))


def test_marginals_probabilities_and_roundtrip(tmp_path):
    m = _marginals()
    assert np.isclose(m.probs[2].sum(), 1.0)
    m.save(tmp_path / "m.json")
    back = MarginalModel.load(tmp_path / "m.json", SCHEMA)
    assert np.allclose(back.probs[2], m.probs[2]) and np.allclose(back.quantiles[0], m.quantiles[0])
    draws = m.sample(np.random.default_rng(1), 200)
    assert draws[:, 0].min() >= 0 and draws[:, 0].max() <= 20000
    assert np.all(draws[:, 0] == np.round(draws[:, 0]))
    with pytest.raises(ValueError):
        MarginalModel(SCHEMA, {2: [0.5, 0.6, 0.1]})
    assert value_precision(np.array([1., 3., 3.5])) == 0.5


def test_random_query_empty_history_returns_first_draw():
    m = _marginals()
    q, fb = random_query(m, KnownExplanations(TABLE), set(), np.random.default_rng(3))
    assert not fb and np.array_equal(q, m.sample(np.random.default_rng(3), 64)[0])


def test_random_queries_avoid_explanations():
    m = _marginals()
    E = KnownExplanations(TABLE)
    E.add(Explanation((0,), (), "base_rule"))          # income <= 5000
    rng = np.random.default_rng(4)
    asked = set()
    for _ in range(1000):
        q, fb = random_query(m, E, asked, rng)
        assert not fb and q[0] > 5000
        asked.add(tuple(q))


def test_fallback_when_everything_covered():
    m = _marginals()
    E = KnownExplanations(TABLE)
    E.add(Explanation((0,), (), "base_rule"))
    E.add(Explanation((1,), (), "base_rule"))
    q, fb = random_query(m, E, set(), np.random.default_rng(0), max_tries=50)
    assert fb and q is not None


def test_committee_identical_trees_pick_first():
    X = np.array([[0.], [1.], [2.], [3.]])
    tree = train_cart(X, [0, 0, 1, 1])
    c = Committee([tree, tree])
    assert committee_query(np.array([[5.], [0.]]), c) == 0
    assert committee_query(np.array([[5.], [0.]]), None) == 0
    with pytest.raises(ValueError):
        Committee([tree])


def test_committee_prefers_disputed_region():
    X = np.array([[0.], [1.], [2.], [3.]])
    a = train_cart(X, [0, 0, 1, 1])               # positive above 1.5
    b = train_cart(X, [0, 0, 0, 1])               # positive above 2.5
    c = Committee([a, b])
    assert committee_query(np.array([[0.], [2.], [3.]]), c) == 1
    assert c.disagreement(np.array([[2.]]))[0] == 1.0


def test_perturbation_examples():
    e = Explanation((0,), (), "base_rule")                   # income <= 5000
    q = np.array([4000., 25., 0.])
    out = perturbation_queries(q, e, ImportanceCounts.zeros(3), 2, 1.0, SCHEMA, CONDS)
    assert len(out) == 1
    cand, feat = out[0]
    assert feat == 0 and cand.tolist() == [5001., 25., 0.]
    two = Explanation((2, 3), (), "base_rule")               # 20 < age <= 30
    vals = sorted(c[1] for c, _ in perturbation_queries(q, two, ImportanceCounts.zeros(3), 1, 1.0,
                                                        SCHEMA, CONDS))
    assert vals == [20.0, 31.0]
    # categorical: move to the next category code
    cat = Explanation((4,), (), "base_rule")
    (c, _), = perturbation_queries(np.array([1., 25., 1.]), cat, ImportanceCounts.zeros(3), 1,
                                   1.0, SCHEMA, CONDS)
    assert c[2] == 2.0


def test_perturbed_queries_escape_one_sided_bounds():
    rng = np.random.default_rng(8)
    for _ in range(200):
        q = np.array([float(rng.integers(0, 5001)), float(rng.integers(31, 90)), 0.0])
        e = Explanation((0, 5), (), "base_rule")             # income <= 5000, age > 30
        for cand, j in perturbation_queries(q, e, ImportanceCounts.zeros(3), 2, 1.0, SCHEMA, CONDS):
            assert not all(CONDS[i].holds(cand) for i in e.conditions)


def test_top_k_features_by_counts():
    schema = FeatureSchema(tuple(Feature(f"f{j}", bounds=(0, 100)) for j in range(4)))
    conds = tuple(Condition(j, LE, 50) for j in range(4))
    # f1 appears 5 times, f2 twice, f3 seven times
    E = ([Explanation((1,), (), "x")] * 5 + [Explanation((2,), (), "x")] * 2
         + [Explanation((3,), (), "x")] * 7)
    counts = update_importance(E, conds, 4)
    assert counts.counts.tolist() == [0, 5, 2, 7]
    out = perturbation_queries(np.full(4, 10.), Explanation((1, 2, 3), (), "x"), counts, 2, 1.0,
                               schema, conds)
    assert [j for _, j in out] == [3, 1]


def test_update_importance_recount(rng):
    E = [Explanation(tuple(sorted(rng.choice(len(CONDS), 2, replace=False))), (), "x")
         for _ in range(50)]
    E = [e for e in E if not (set(e.conditions) >= {0, 1})]
    counts = update_importance(E, CONDS, 3)
    for j in range(3):
        assert counts[j] == sum(any(CONDS[i].feature == j for i in e.conditions) for e in E)
    assert update_importance([], CONDS, 3).counts.tolist() == [0, 0, 0]


def test_pool_order_and_hygiene():
    pool = QueryPool(3)
    counts = ImportanceCounts(np.array([1, 3, 0]))
    asked = {(9., 9., 9.)}
    assert pool.push(np.array([1., 0, 0]), 0, 0, asked)
    assert pool.push(np.array([2., 0, 0]), 1, 0, asked)
    assert pool.push(np.array([3., 0, 0]), 1, 0, asked)
    assert not pool.push(np.array([3., 0, 0]), 1, 0, asked)
    assert not pool.push(np.array([9., 9, 9]), 2, 0, asked)
    order = [pool.pop(counts)[0][0] for _ in range(3)]
    assert order == [2., 3., 1.] and pool.pop(counts) is None


def test_surrogate_predict_examples(rng):
    E = KnownExplanations(TABLE)
    E.add(Explanation((0,), (), "x"))
    X = np.array([[1000., 40, 0], [9000., 40, 0]])
    assert surrogate_predict(E, ConstantModel(0), X, TABLE).tolist() == [1, 0]
    tree = train_cart(rng.integers(0, 20000, (30, 3)).astype(float), rng.integers(0, 2, 30))
    Xt = np.column_stack([rng.integers(0, 20001, 500), rng.integers(18, 91, 500),
                          rng.integers(0, 3, 500)]).astype(float)
    assert np.array_equal(surrogate_predict([], tree, Xt, TABLE), tree.predict(Xt))
    covered = np.array([CONDS[0].holds(x) for x in Xt])
    expect = (covered | (tree.predict(Xt) == 1)).astype(int)
    assert np.array_equal(surrogate_predict(E, tree, Xt), expect)
    assert np.array_equal(surrogate_predict(list(E), tree, Xt, TABLE), expect)


def test_attacker_never_repeats_a_query():
    m = _marginals()
    for strategy in ("random", "committee", "perturbation"):
        att = Attacker(AttackerConfig(strategy, seed=1, retrain_every=20), m, TABLE)
        seen = set()
        for t in range(120):
            q, prov = att.next_query()
            assert tuple(q) not in seen
            seen.add(tuple(q))
            positive = q[0] <= 5000
            att.observe(q, int(positive), Explanation((0,), (), "x") if positive else None)
        assert len(att.E) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        AttackerConfig("iwal")
    with pytest.raises(ValueError):
        AttackerConfig(committee_size=1)
