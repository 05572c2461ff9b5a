import numpy as np
import pytest

from faithful_defense.dataset import (CATEGORICAL, CONTINUOUS, Feature, FeatureSchema, RawDataset,
                                      binarize, BinarizationPolicy)


def random_raw(rng, n=50, n_cont=3, n_cat=1, n_levels=12):
    feats, cols = [], []
    for j in range(n_cont):
        cols.append(rng.integers(0, n_levels, size=n).astype(float))
        feats.append(Feature(f"x{j}", CONTINUOUS))
    for j in range(n_cat):
        k = int(rng.integers(2, 5))
        cols.append(rng.integers(0, k, size=n).astype(float))
        feats.append(Feature(f"c{j}", CATEGORICAL, tuple(f"v{i}" for i in range(k))))
    X = np.column_stack(cols)
    schema = FeatureSchema(tuple(feats)).resolve_bounds(X)
    return RawDataset(schema, X, rng.integers(0, 2, size=n))


def random_binarized(rng, n=60, n_cont=4, n_cat=1, quantiles=4):
    return binarize(random_raw(rng, n, n_cont, n_cat), BinarizationPolicy(quantiles=quantiles))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def credit_schema():
    return FeatureSchema((Feature("income", CONTINUOUS, bounds=(0, 20000)),
                          Feature("age", CONTINUOUS, bounds=(18, 90)),
                          Feature("housing", CATEGORICAL, ("rent", "own", "free"))))


FIXTURE_MODEL = __import__("pathlib").Path(__file__).parent / "fixtures" / "three_rule_model.json"


def credit_data(n=300, seed=7, quantiles=6):
    """Random rows for the three-rule fixture model, binarized with its conditions."""
    from faithful_defense.models import load_model
    f = load_model(FIXTURE_MODEL)
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.integers(0, 20001, n), rng.integers(18, 91, n),
                         rng.integers(0, 3, n)]).astype(float)
    raw = RawDataset(f.schema, X, f.predict_raw(X))
    data = binarize(raw, BinarizationPolicy(quantiles=quantiles), include=f.all_conditions())
    return f.bind(data), data
