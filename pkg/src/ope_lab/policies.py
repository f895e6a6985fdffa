"""Policy constructors evaluated into :class:`~ope_lab.core.PolicyMatrix` form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PolicyKind, PolicyMatrix, as_probs

ALPHA_GRID = (0.7, 0.4, 0.0)


class UniformPolicyModel:
    """Fitted-model stand-in whose ``predict_proba`` is uniform over ``n_actions``."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def predict_proba(self, X) -> np.ndarray:
        return np.full((np.asarray(X).shape[0], self.n_actions), 1.0 / self.n_actions)


def uniform_policy(n_rounds: int, n_actions: int) -> PolicyMatrix:
    if n_actions < 1:
        raise ValueError("n_actions must be >= 1")
    return PolicyMatrix(np.full((n_rounds, n_actions), 1.0 / n_actions))


def one_hot_policy(actions, n_actions: int) -> PolicyMatrix:
    actions = np.asarray(actions, dtype=np.int64)
    probs = np.zeros((actions.shape[0], n_actions))
    probs[np.arange(actions.shape[0]), actions] = 1.0
    return PolicyMatrix(probs)


def deterministic_from_classifier(model, X) -> PolicyMatrix:
    """One-hot rows at the classifier's most probable class.

    ``np.argmax`` returns the first maximum, so exact ties go to the lowest
    action index.
    """
    probs = np.asarray(model.predict_proba(X), dtype=float)
    return one_hot_policy(np.argmax(probs, axis=1), probs.shape[1])


def softmax_policy(model, X) -> PolicyMatrix:
    return PolicyMatrix(np.asarray(model.predict_proba(X), dtype=float))


def mix(alpha: float, det, unif) -> PolicyMatrix:
    """Row-wise convex combination ``alpha * det + (1 - alpha) * unif``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    d, u = as_probs(det), as_probs(unif)
    if d.shape != u.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {u.shape}")
    return PolicyMatrix(alpha * d + (1.0 - alpha) * u)


@dataclass(frozen=True)
class MixturePolicy:
    """Behavior policy ``alpha * pi_d + (1 - alpha) * uniform`` over a fitted classifier."""

    alpha: float
    base: object

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def evaluate(self, X) -> PolicyMatrix:
        det = deterministic_from_classifier(self.base, X)
        return mix(self.alpha, det, uniform_policy(*det.shape))


def sequential(rows, periods=None) -> PolicyMatrix:
    """Wrap per-period rows (one per round) as a sequential policy."""
    return PolicyMatrix(np.asarray(rows, dtype=float), PolicyKind.SEQUENTIAL, periods)
