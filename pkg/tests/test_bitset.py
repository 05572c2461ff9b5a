import numpy as np
from hypothesis import given, strategies as st

from faithful_defense.bitset import CoverageSet, from_bool, indices, popcount, to_bool


@given(st.lists(st.booleans(), max_size=300))
def test_pack_roundtrip(mask):
    mask = np.array(mask, dtype=bool)
    bits = from_bool(mask)
    assert np.array_equal(to_bool(bits, len(mask)), mask)
    assert list(indices(bits)) == np.flatnonzero(mask).tolist()
    assert popcount(bits) == int(mask.sum())


@given(st.sets(st.integers(0, 199)), st.sets(st.integers(0, 199)))
def test_set_algebra_matches_python_sets(a, b):
    A, B = CoverageSet.from_indices(a, 200), CoverageSet.from_indices(b, 200)
    assert set(A & B) == a & b
    assert set(A | B) == a | b
    assert set(A - B) == a - b
    assert len(A) == len(a)
    assert A.issubset(A | B)
    assert all(i in A for i in a)


def test_empty_set_is_falsy_but_not_none():
    s = CoverageSet(0, 10)
    assert len(s) == 0 and not s
    assert CoverageSet.all(10).count == 10
