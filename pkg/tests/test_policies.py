import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ope_lab.core import PolicyKind, is_simplex_rows
from ope_lab.policies import (ALPHA_GRID, MixturePolicy, UniformPolicyModel, deterministic_from_classifier,
                              mix, one_hot_policy, sequential, uniform_policy)


class _Fixed:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def predict_proba(self, X):
        return np.tile(self.probs, (len(X), 1))


def test_uniform_policy():
    np.testing.assert_array_equal(uniform_policy(3, 4).probs, 0.25)
    np.testing.assert_array_equal(uniform_policy(2, 1).probs, 1.0)
    np.testing.assert_allclose(uniform_policy(5, 7).probs.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        uniform_policy(2, 0)


def test_uniform_model_shape():
    assert UniformPolicyModel(3).predict_proba(np.zeros((4, 2))).shape == (4, 3)


def test_deterministic_argmax_and_ties():
    X = np.zeros((2, 1))
    np.testing.assert_array_equal(deterministic_from_classifier(_Fixed([0.1, 0.7, 0.2]), X).probs,
                                  [[0, 1, 0], [0, 1, 0]])
    np.testing.assert_array_equal(deterministic_from_classifier(_Fixed([0.4, 0.2, 0.4]), X).probs[0], [1, 0, 0])


def test_mix_cases():
    det = one_hot_policy([0], 3)
    u = uniform_policy(1, 3)
    np.testing.assert_allclose(mix(0.4, det, u).probs, [[0.6, 0.2, 0.2]])
    np.testing.assert_array_equal(mix(0.0, det, u).probs, u.probs)
    np.testing.assert_array_equal(mix(1.0, det, u).probs, det.probs)
    with pytest.raises(ValueError):
        mix(1.2, det, u)
    with pytest.raises(ValueError):
        mix(0.5, det, uniform_policy(2, 3))


def test_alpha_grid():
    assert ALPHA_GRID == (0.7, 0.4, 0.0)


def test_mixture_policy_evaluate():
    pol = MixturePolicy(0.7, _Fixed([0.2, 0.5, 0.3]))
    np.testing.assert_allclose(pol.evaluate(np.zeros((2, 1))).probs[0], [0.1, 0.8, 0.1])
    with pytest.raises(ValueError):
        MixturePolicy(-0.1, _Fixed([1.0]))


def test_sequential_kind():
    pm = sequential(np.full((3, 2), 0.5))
    assert pm.kind is PolicyKind.SEQUENTIAL


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.999), st.integers(1, 6), st.integers(0, 10_000))
def test_mix_floor_and_simplex(alpha, k, seed):
    rng = np.random.default_rng(seed)
    det = one_hot_policy(rng.integers(0, k, 5), k)
    out = mix(alpha, det, uniform_policy(5, k)).probs
    assert is_simplex_rows(out, 1e-9)
    assert out.min() >= (1 - alpha) / k - 1e-12
