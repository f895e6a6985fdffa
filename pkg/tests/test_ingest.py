import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ope_lab.ingest import (LabeledDataset, LibsvmParseError, SplitPlan, parse_libsvm, serialize_libsvm,
                            split, split_indices, standardize)


def test_parse_single_line():
    data = parse_libsvm("3 1:0.5 4:-1.25\n")
    np.testing.assert_array_equal(data.features, [[0.5, 0.0, 0.0, -1.25]])
    assert data.label_map == (3,)
    assert data.labels.tolist() == [0]


def test_parse_skips_blank_and_comments():
    data = parse_libsvm("# header\n\n2 1:1\n  \n5 2:2 # trailing\n")
    assert data.features.shape == (2, 2)
    assert data.labels.tolist() == [0, 1]
    assert data.label_map == (2, 5)


def test_label_remap_preserves_sort_order():
    data = parse_libsvm("10 1:1\n-1 1:2\n4 1:3\n")
    assert data.labels.tolist() == [2, 0, 1]
    assert data.class_count == 3


@pytest.mark.parametrize("text, message", [
    ("1 2:0.1 2:0.2\n", "duplicate feature index 2 at line 1"),
    ("1 1:0\n1 3:0.1 2:0.2\n", "non-increasing feature index 2 at line 2"),
    ("1 1:abc\n", "non-numeric"),
    ("x 1:1\n", "non-numeric label"),
    ("", "empty"),
    ("# only comment\n", "empty"),
])
def test_parse_errors(text, message):
    with pytest.raises(LibsvmParseError, match=message):
        parse_libsvm(text)


def test_standardize_population_convention():
    data = LabeledDataset(np.array([[1.0, 5.0], [3.0, 5.0]]), np.array([0, 1]), 2)
    out, rec = standardize(data)
    np.testing.assert_array_equal(out.features, [[-1.0, 0.0], [1.0, 0.0]])
    assert rec.scale[1] == 1.0


def test_standardize_round_trip_is_bitwise():
    rng = np.random.default_rng(3)
    data = LabeledDataset(rng.normal(size=(20, 4)) * 7 + 2, rng.integers(0, 3, 20), 3)
    out, rec = standardize(data)
    assert np.array_equal(rec.apply(data.features), out.features)
    np.testing.assert_allclose(out.features.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.features.std(axis=0), 1, atol=1e-12)


def test_standardize_needs_two_rows():
    with pytest.raises(ValueError):
        standardize(LabeledDataset(np.ones((1, 2)), np.array([0]), 1))


def _toy(n):
    return LabeledDataset(np.arange(n, dtype=float).reshape(-1, 1), np.zeros(n, dtype=int), 1)


def test_split_deterministic_and_disjoint():
    plan = SplitPlan(7, (("a", 4), ("b", 6)))
    p1, p2 = split(_toy(10), plan), split(_toy(10), plan)
    for x, y in zip(p1, p2):
        assert np.array_equal(x.features, y.features)
    ids = np.concatenate([p.features[:, 0] for p in p1])
    assert sorted(ids.tolist()) == list(range(10))


def test_split_default_layout():
    parts = split(_toy(5000), SplitPlan.ope2d(0))
    assert [len(p) for p in parts] == [1000, 1000, 1000, 2000]


def test_split_plan_errors():
    with pytest.raises(ValueError):
        split(_toy(5), SplitPlan(0, (("a", 4), ("b", 2))))
    with pytest.raises(ValueError):
        SplitPlan(0, (("a", 0),))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000), st.data())
def test_split_partition_property(n, seed, data):
    cut = data.draw(st.integers(1, n - 1))
    a, b = split_indices(n, SplitPlan(seed, (("a", cut), ("b", n - cut))))
    assert not set(a) & set(b)
    assert len(a) + len(b) == n
    a2, _ = split_indices(n, SplitPlan(seed, (("a", cut), ("b", n - cut))))
    assert np.array_equal(a, a2)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, allow_subnormal=False)),
       st.integers(1, 4), st.data())
def test_libsvm_round_trip(features, k, data):
    labels = np.array(data.draw(st.lists(st.integers(0, k - 1), min_size=features.shape[0],
                                         max_size=features.shape[0])))
    original = LabeledDataset(features, labels, k)
    back = parse_libsvm(serialize_libsvm(original), n_features=features.shape[1])
    assert np.array_equal(back.features, original.features)
    # labels come back remapped onto the classes actually present
    present = np.unique(labels)
    assert np.array_equal(present[back.labels], labels)
