import filecmp

import numpy as np

from faithful_defense.dataset import load_csv
from faithful_defense.models import load_model
from faithful_defense.synthetic import SyntheticSpec, generate_synthetic, write_synthetic


def test_labels_follow_planted_model():
    train, test, f = generate_synthetic(SyntheticSpec(n=1000, p=10, rules=3), 0)
    assert train.n == 800 and test.n == 200 and train.p == 10
    for split in (train, test):
        assert np.array_equal(split.y, f.predict_raw(split.X))
    assert len(f.rules) == 3 and f.metadata["provenance"] == "planted"


def test_positive_rate_near_target():
    spec = SyntheticSpec(n=1000, p=10, rules=3, positive_rate=0.3)
    rates = []
    for seed in range(20):
        train, test, _ = generate_synthetic(spec, seed)
        rates.append(np.concatenate([train.y, test.y]).mean())
    assert abs(np.mean(rates) - 0.3) <= 0.05
    assert all(abs(r - 0.3) <= 0.05 for r in rates)


def test_files_deterministic_and_loadable(tmp_path):
    a = write_synthetic(SyntheticSpec(n=200, p=5), 3, tmp_path / "a")
    b = write_synthetic(SyntheticSpec(n=200, p=5), 3, tmp_path / "b")
    for k in a:
        assert filecmp.cmp(a[k], b[k], shallow=False)
    f = load_model(a["model"])
    train = load_csv(a["train"], f.schema)
    assert np.array_equal(train.y, f.predict_raw(train.X))
