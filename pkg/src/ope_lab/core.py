"""Shared data model for logged bandit feedback.

Every estimator in the package reduces to an inner product between an
evaluation policy matrix and a per-record score matrix, so the two matrix
containers and :func:`inner_value` live here together with the log type.

Actions are 0-based everywhere inside the package. File formats use 1-based
actions; the conversion happens in :mod:`ope_lab.io`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_PROPENSITY_FLOOR = 1e-6
SIMPLEX_ATOL = 1e-9


class OverlapError(ValueError):
    """A chosen-action propensity fell below the configured floor."""


class PolicyKind(enum.Enum):
    FIXED = "fixed"
    SEQUENTIAL = "sequential"


class EstimatorTag(enum.Enum):
    IPW = "IPW"
    DM = "DM"
    AIPW = "AIPW"
    A2IPW = "A2IPW"


def _index(idx) -> np.ndarray:
    """Row selector; an empty list selects nothing rather than failing as a float index."""
    idx = np.asarray(idx)
    return idx.astype(np.intp) if idx.size == 0 else idx


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def is_simplex_rows(probs: np.ndarray, atol: float = SIMPLEX_ATOL) -> bool:
    probs = np.asarray(probs, dtype=float)
    return bool(
        probs.ndim == 2
        and np.all(probs >= -atol)
        and np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=atol)
    )


@dataclass(frozen=True)
class LoggedBanditData:
    """A log of (covariate, chosen action, reward, behavior propensities).

    Parameters
    ----------
    covariates: array-like, shape (n_rounds, dim_context)
        Observed contexts.

    actions: array-like, shape (n_rounds,)
        Chosen actions, 0-based.

    rewards: array-like, shape (n_rounds,)
        Observed rewards of the chosen actions.

    behavior_props: array-like, shape (n_rounds, n_actions)
        Behavior probabilities for every action at each round. Row ``t`` may
        differ from row ``t'`` when the behavior policy is time-dependent.

    reward_bound: float, default=None
        Declared bound on ``|reward|``. ``None`` means unbounded.

    Construction only checks shapes. Overlap and simplex conditions are
    checked by :func:`validate_log` (report) and by the estimators (raise).
    """

    covariates: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_props: np.ndarray
    reward_bound: Optional[float] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        a = np.asarray(self.actions)
        if a.size and not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise ValueError("actions must be integers")
        a = a.astype(np.int64)
        y = np.asarray(self.rewards, dtype=float)
        p = np.asarray(self.behavior_props, dtype=float)
        if x.ndim != 2 or a.ndim != 1 or y.ndim != 1 or p.ndim != 2:
            raise ValueError("covariates/behavior_props must be 2-D, actions/rewards 1-D")
        n = a.shape[0]
        if x.shape[0] != n or y.shape[0] != n or p.shape[0] != n:
            raise ValueError(
                f"length mismatch: covariates {x.shape[0]}, actions {n}, "
                f"rewards {y.shape[0]}, behavior_props {p.shape[0]}"
            )
        if n and (a.min() < 0 or a.max() >= p.shape[1]):
            raise ValueError(f"actions must lie in [0, {p.shape[1] - 1}]")
        for name, arr in (("covariates", x), ("actions", a), ("rewards", y), ("behavior_props", p)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_rounds(self) -> int:
        return int(self.actions.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.behavior_props.shape[1])

    @property
    def chosen_props(self) -> np.ndarray:
        return self.behavior_props[np.arange(self.n_rounds), self.actions]

    def __len__(self) -> int:
        return self.n_rounds

    def subset(self, idx) -> "LoggedBanditData":
        idx = _index(idx)
        return LoggedBanditData(
            self.covariates[idx],
            self.actions[idx],
            self.rewards[idx],
            self.behavior_props[idx],
            self.reward_bound,
        )

    def with_rewards(self, rewards) -> "LoggedBanditData":
        return LoggedBanditData(
            self.covariates, self.actions, rewards, self.behavior_props, self.reward_bound
        )

    def with_behavior(self, behavior_props) -> "LoggedBanditData":
        return LoggedBanditData(
            self.covariates, self.actions, self.rewards, behavior_props, self.reward_bound
        )


@dataclass(frozen=True)
class PolicyMatrix:
    """Row-stochastic ``(n_rounds, n_actions)`` matrix of action probabilities.

    ``periods`` records, for a sequential policy, the period index each row
    was computed for.
    """

    probs: np.ndarray
    kind: PolicyKind = PolicyKind.FIXED
    periods: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError("policy probabilities must be a 2-D array")
        if not is_simplex_rows(p):
            raise ValueError("every policy row must lie in the probability simplex")
        object.__setattr__(self, "probs", _frozen(p))
        if self.kind is PolicyKind.SEQUENTIAL:
            periods = (
                np.arange(p.shape[0]) if self.periods is None else np.asarray(self.periods)
            )
            if periods.shape != (p.shape[0],):
                raise ValueError("periods must have one entry per row")
            object.__setattr__(self, "periods", _frozen(periods.astype(np.int64)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-record score vectors ``Gamma_t``; an estimate is ``mean_t <pi(x_t), Gamma_t>``."""

    scores: np.ndarray
    estimator_tag: EstimatorTag

    def __post_init__(self) -> None:
        s = np.array(self.scores, dtype=float)
        if s.ndim != 2:
            raise ValueError("scores must be a 2-D array")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class FullInformationData:
    """Covariates with every potential outcome; used by simulators and truth oracles.

    ``f_star`` and ``nu_star`` hold the conditional mean and variance of each
    potential outcome when the generator knows them.
    """

    covariates: np.ndarray
    potential_outcomes: np.ndarray
    f_star: Optional[np.ndarray] = None
    nu_star: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.asarray(self.potential_outcomes, dtype=float)
        if y.ndim != 2 or y.shape[0] != x.shape[0]:
            raise ValueError("potential_outcomes must be (n_rounds, n_actions) matching covariates")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "potential_outcomes", _frozen(y))
        for name in ("f_star", "nu_star"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != y.shape:
                    raise ValueError(f"{name} must match potential_outcomes in shape")
                object.__setattr__(self, name, _frozen(arr))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))

    @property
    def n_rounds(self) -> int:
        return int(self.potential_outcomes.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.potential_outcomes.shape[1])

    def subset(self, idx) -> "FullInformationData":
        idx = _index(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return FullInformationData(
            self.covariates[idx],
            self.potential_outcomes[idx],
            pick(self.f_star),
            pick(self.nu_star),
            pick(self.labels),
        )


@dataclass
class ValidationReport:
    ok: bool
    min_prop: float
    max_abs_reward: float
    violations: list[tuple[str, int]] = field(default_factory=list)
    unbounded: bool = False

    def codes(self) -> set[str]:
        return {code for code, _ in self.violations}


def validate_log(
    log: LoggedBanditData, floor: float = DEFAULT_PROPENSITY_FLOOR
) -> ValidationReport:
    """Scan a log for overlap, simplex and reward-bound violations.

    Never raises; violations are returned as ``(code, row_index)`` pairs with
    codes ``"overlap"``, ``"simplex"`` and ``"reward_bound"``.
    """
    violations: list[tuple[str, int]] = []
    p = log.behavior_props
    row_sums = p.sum(axis=1)
    bad_rows = np.flatnonzero(
        (np.abs(row_sums - 1.0) > SIMPLEX_ATOL) | np.any(p < 0.0, axis=1)
    )
    violations += [("simplex", int(t)) for t in bad_rows]
    chosen = log.chosen_props
    violations += [("overlap", int(t)) for t in np.flatnonzero(chosen < floor)]
    max_abs = float(np.max(np.abs(log.rewards))) if log.n_rounds else 0.0
    if log.reward_bound is not None:
        over = np.flatnonzero(np.abs(log.rewards) > log.reward_bound)
        violations += [("reward_bound", int(t)) for t in over]
    return ValidationReport(
        ok=not violations,
        min_prop=float(chosen.min()) if log.n_rounds else float("nan"),
        max_abs_reward=max_abs,
        violations=violations,
        unbounded=log.reward_bound is None,
    )


def check_overlap(log: LoggedBanditData, floor: float = DEFAULT_PROPENSITY_FLOOR) -> None:
    chosen = log.chosen_props
    bad = np.flatnonzero(chosen < floor)
    if bad.size:
        raise OverlapError(
            f"behavior propensity {chosen[bad[0]]:.3g} at row {int(bad[0])} "
            f"is below the floor {floor:g}"
        )


def as_probs(policy) -> np.ndarray:
    if isinstance(policy, PolicyMatrix):
        return policy.probs
    return np.asarray(policy, dtype=float)


def as_scores(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.scores
    return np.asarray(scores, dtype=float)


def per_record_values(policy, scores) -> np.ndarray:
    """``Z_t = <pi(x_t), Gamma_t>`` for every record."""
    p, s = as_probs(policy), as_scores(scores)
    if p.shape != s.shape:
        raise ValueError(f"shape mismatch: policy {p.shape} vs scores {s.shape}")
    return np.einsum("tk,tk->t", p, s)


def inner_value(policy, scores) -> float:
    """Return ``(1/T) sum_t <pi(x_t), Gamma_t>``."""
    return float(per_record_values(policy, scores).mean())


def true_policy_value(full: FullInformationData, policy) -> float:
    """Full-information value ``(1/T) sum_t sum_a pi(a|x_t) Y_t(a)``."""
    p = as_probs(policy)
    if p.shape != full.potential_outcomes.shape:
        raise ValueError(
            f"shape mismatch: policy {p.shape} vs outcomes {full.potential_outcomes.shape}"
        )
    return float(np.einsum("tk,tk->t", p, full.potential_outcomes).mean())
