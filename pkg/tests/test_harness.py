import filecmp
import numpy as np
import pytest

from faithful_defense import harness
from faithful_defense.cart import ConstantModel
from faithful_defense.dataset import cap
from faithful_defense.defense import Explanation
from faithful_defense.harness import (ExperimentConfig, ExperimentError, agreement_metric,
                                      apply_overrides, coverage_metric, emit_results,
                                      explanation_fpr, prepare, read_curves, recompute_metrics,
                                      run_extraction)

SMALL = {"n": 400, "p": 6, "rules": 3}


def _cfg(**kw):
    base = dict(synthetic=SMALL, max_q=200, cadence=50)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def setup():
    return prepare(_cfg())


@pytest.fixture(scope="module")
def greedy_run(setup):
    return run_extraction(_cfg(defense="greedy"), setup)


def test_minimal_run_writes_four_files(tmp_path):
    run = run_extraction(_cfg(defense="none", max_q=1))
    files = emit_results(run, tmp_path)
    assert sorted(p.name for p in files) == ["config.json", "curves.csv", "queries.jsonl",
                                             "summary.json"]
    assert len(run.records) == 1 and len(run.history) == 0
    assert run.summary["coverage_train"] == 0.0


def test_curve_rows_and_roundtrip(tmp_path, greedy_run):
    emit_results(greedy_run, tmp_path)
    rows = read_curves(tmp_path / "curves.csv")
    assert len(rows) == 200 // 50 + 1
    assert rows == greedy_run.curves
    assert [r["query_count"] for r in rows] == [0, 50, 100, 150, 200]


def test_run_invariants(setup, greedy_run):
    run = greedy_run
    assert len(run.records) == 200
    cov = [r["coverage_train"] for r in run.curves]
    assert all(a <= b for a, b in zip(cov, cov[1:]))
    assert all(0 <= v <= 1 for r in run.curves for v in r.values() if isinstance(v, float))
    assert len(run.history) <= sum(r["label"] for r in run.records)
    assert run.summary["explanation_fpr"] == 0.0
    assert run.summary["faithful_fraction"] == 1.0
    # the initial surrogate predicts 0 everywhere
    neg = float(np.mean(setup.test_labels == 0))
    assert run.curves[0]["agreement"] == neg


def test_coverage_metric_examples(setup, greedy_run):
    data, f = setup.train, setup.model
    pos = f.predict_binary(data.matrix) == 1
    assert coverage_metric([], data, pos) == 0.0
    whole = [Explanation(r.conditions, (), "base_rule") for r in f.rules]
    assert coverage_metric(whole, data, pos) == 1.0
    assert coverage_metric(whole, data, np.zeros(data.n, bool)) is None
    E = list(greedy_run.history)
    hit = [i for i in np.flatnonzero(pos) if any(cap(e.conditions, data.row(i)) for e in E)]
    assert coverage_metric(E, data, pos) == len(hit) / pos.sum()
    assert greedy_run.summary["coverage_train"] == len(hit) / pos.sum()


def test_agreement_examples(setup, greedy_run):
    f, test = setup.model, setup.test

    class Clone:
        def predict(self, X):
            return f.predict_raw(X)

    assert agreement_metric(f, [], Clone(), test) == 1.0
    neg_rate = float(np.mean(f.predict_binary(test.matrix) == 0))
    assert agreement_metric(f, [], ConstantModel(0), test) == neg_rate
    tree = greedy_run.surrogates[-1]
    E = list(greedy_run.history)
    truth = f.predict_binary(test.matrix)
    pred = []
    for i in range(test.n):
        covered = any(cap(e.conditions, test.row(i)) for e in E)
        pred.append(int(covered or tree.predict(test.X[i:i + 1])[0] == 1))
    expect = float(np.mean(np.array(pred) == truth))
    assert agreement_metric(f, E, tree, test) == expect == greedy_run.curves[-1]["agreement"]


def test_fpr_examples(setup, greedy_run):
    f, test = setup.model, setup.test
    assert explanation_fpr([], test, f) == 0.0
    assert explanation_fpr(list(greedy_run.history), test, f) == 0.0
    # dropping a base condition makes an explanation unfaithful and it leaks negatives
    wide = [Explanation(r.conditions[:-1], (), "corrupt") for r in f.rules if len(r.conditions) > 1]
    assert explanation_fpr(wide, test, f) > 0


def test_determinism_byte_identical(tmp_path):
    for name in ("a", "b"):
        emit_results(run_extraction(_cfg(defense="exact_ra", strategy="committee",
                                         defense_seed=3, attacker_seed=5)), tmp_path / name)
    for fname in ("curves.csv", "queries.jsonl", "summary.json", "config.json"):
        if fname == "summary.json":
            continue    # holds wall-clock timings
        assert filecmp.cmp(tmp_path / "a" / fname, tmp_path / "b" / fname, shallow=False)


def test_recompute_matches_run(tmp_path, setup, greedy_run):
    emit_results(greedy_run, tmp_path)
    curves, final = recompute_metrics(tmp_path, setup)
    assert curves == greedy_run.curves
    assert final["agreement"] == greedy_run.summary["agreement"]
    assert final["explanations"] == len(greedy_run.history)


def test_replay_mode(setup, greedy_run, tmp_path):
    emit_results(greedy_run, tmp_path)
    replay = harness.load_queries(tmp_path / "queries.jsonl")
    other = run_extraction(_cfg(defense="base_rule", replay=str(tmp_path / "queries.jsonl")), setup)
    assert [r["query"] for r in other.records] == [r["query"] for r in greedy_run.records]
    assert all(r["source"] == "replay" for r in other.records)
    for a, b in zip(greedy_run.curves, other.curves):
        assert a["coverage_test"] <= b["coverage_test"]
    with pytest.raises(ExperimentError):
        run_extraction(_cfg(max_q=300), setup, replay=replay)


def test_step_index_on_failure(setup, monkeypatch):
    from faithful_defense import defense
    calls = {"n": 0}
    real = defense.Defender.answer

    def boom(self, q, query_id=None):
        calls["n"] += 1
        if calls["n"] == 7:
            raise RuntimeError("solver exploded")
        return real(self, q, query_id)

    monkeypatch.setattr(defense.Defender, "answer", boom)
    with pytest.raises(ExperimentError) as err:
        run_extraction(_cfg(max_q=20), setup)
    assert err.value.step == 7


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "exp.toml").write_text(
        '[data]\nsynthetic = { n = 300, p = 5 }\nseed = 2\n'
        '[defense]\nmethod = "exact"\nl = 2\nseed = 4\n'
        '[attacker]\nstrategy = "random"\nseed = 9\n'
        '[run]\nmax_q = 100\noutput = "out"\n')
    cfg = ExperimentConfig.load(tmp_path / "exp.toml")
    assert (cfg.defense, cfg.l, cfg.defense_seed, cfg.attacker_seed, cfg.data_seed) == \
        ("exact", 2, 4, 9, 2)
    assert cfg.output == str(tmp_path / "out")
    cfg = apply_overrides(cfg, ["defense.method=greedy", "run.max_q=10", "attacker.k=3"])
    assert (cfg.defense, cfg.max_q, cfg.k) == ("greedy", 10, 3)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        apply_overrides(cfg, ["defense.nope=1"])
    with pytest.raises(ValueError):
        ExperimentConfig(synthetic={}, max_q=0)
    with pytest.raises(ValueError):
        ExperimentConfig(synthetic={}, defense="lime")


def test_csv_inputs(tmp_path):
    from faithful_defense.synthetic import SyntheticSpec, write_synthetic
    paths = write_synthetic(SyntheticSpec(n=300, p=5), 1, tmp_path)
    cfg = ExperimentConfig(train=str(paths["train"]), test=str(paths["test"]),
                           model=str(paths["model"]), max_q=60, cadence=30)
    run = run_extraction(cfg)
    assert len(run.curves) == 3 and run.summary["explanation_fpr"] in (0.0, None)


def test_sweep_directories(tmp_path):
    out = harness.sweep(_cfg(max_q=50), ["greedy", "none"], ["random"], [0, 1], tmp_path,
                        workers=1)
    assert len(out) == 4
    assert (tmp_path / "greedy__random__seed1" / "curves.csv").exists()
