"""Score functions, policy-value estimators and their variance quantities.

Each estimator builds a score matrix ``Gamma`` with one row per logged
record; the estimate for a policy ``pi`` is ``mean_t <pi(x_t), Gamma_t>``.

* IPW:  ``Gamma_t(a) = 1[A_t = a] Y_t / pi_b(A_t | X_t)``
* DM:   ``Gamma_t(a) = f(a, X_t)``
* AIPW: ``Gamma_t(a) = 1[A_t = a] (Y_t - f(a, X_t)) / pi_b(A_t | X_t) + f(a, X_t)``

The sequential variants (A2IPW, AP) use a reward model fit only on rounds
before ``t``, which keeps the per-round terms martingale differences when the
behavior policy adapts over time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import clone

from .core import (
    DEFAULT_PROPENSITY_FLOOR,
    EstimatorTag,
    LoggedBanditData,
    PolicyKind,
    PolicyMatrix,
    ScoreMatrix,
    as_probs,
    check_overlap,
    is_simplex_rows,
    per_record_values,
)
from .models import LogisticPolicy, OnlineRidge
from .policies import UniformPolicyModel

TARGET_FIXED = "value of the evaluation policy"
TARGET_AVERAGE = "average value of the per-round evaluation policies"
TARGET_CONDITIONAL = "value of the history-fitted policy, conditional on the history"


@dataclass(frozen=True)
class VarianceReport:
    """Plug-in spread of the per-record values ``Z_t = <pi(x_t), Gamma_t>``.

    ``target`` names the quantity the estimate is centered on; for the AP
    estimator this is the average of the per-round policy values, not the
    value of any single policy.
    """

    empirical_variance: float
    standard_error: float
    n_rounds: int
    target: str = TARGET_FIXED

    def __post_init__(self) -> None:
        if self.empirical_variance < 0:
            raise ValueError("variance must be nonnegative")

    def interval(self, estimate: float, z: float = 1.959963984540054) -> tuple[float, float]:
        return estimate - z * self.standard_error, estimate + z * self.standard_error


def _variance_of(z: np.ndarray, target: str = TARGET_FIXED) -> VarianceReport:
    t = z.shape[0]
    if t < 2:
        raise ValueError("variance needs at least two records")
    var = float(np.var(z, ddof=1))
    return VarianceReport(var, math.sqrt(var / t), t, target)


def empirical_variance(policy, scores, target: str = TARGET_FIXED) -> VarianceReport:
    """Unbiased sample variance of ``Z_t`` and the standard error ``sqrt(var / T)``."""
    return _variance_of(per_record_values(policy, scores), target)


def _reward_matrix(model, log: LoggedBanditData) -> np.ndarray:
    f = np.asarray(model.predict_all(log.covariates), dtype=float)
    if f.shape != (log.n_rounds, log.num_actions):
        raise ValueError(
            f"reward model predicts {f.shape[1]} actions but the log has {log.num_actions}"
        )
    return f


def scores_ipw(log: LoggedBanditData, floor: float = DEFAULT_PROPENSITY_FLOOR) -> ScoreMatrix:
    check_overlap(log, floor)
    s = np.zeros((log.n_rounds, log.num_actions))
    s[np.arange(log.n_rounds), log.actions] = log.rewards / log.chosen_props
    return ScoreMatrix(s, EstimatorTag.IPW)


def scores_dm(log: LoggedBanditData, model) -> ScoreMatrix:
    return ScoreMatrix(_reward_matrix(model, log), EstimatorTag.DM)


def _aipw_from_predictions(log: LoggedBanditData, f: np.ndarray) -> np.ndarray:
    rows = np.arange(log.n_rounds)
    s = f.copy()
    s[rows, log.actions] += (log.rewards - f[rows, log.actions]) / log.chosen_props
    return s


def scores_aipw(log: LoggedBanditData, model, floor: float = DEFAULT_PROPENSITY_FLOOR) -> ScoreMatrix:
    check_overlap(log, floor)
    return ScoreMatrix(_aipw_from_predictions(log, _reward_matrix(model, log)), EstimatorTag.AIPW)


def crossfit_folds(n_rounds: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation; the first ``ceil(T/2)`` permuted rows form fold A."""
    perm = np.random.default_rng(seed).permutation(n_rounds)
    half = (n_rounds + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _with_actions(learner, n_actions: int):
    model = clone(learner)
    if "n_actions" in model.get_params():
        model.set_params(n_actions=n_actions)
    return model


def aipw_crossfit(log: LoggedBanditData, learner, seed: int = 0,
                  floor: float = DEFAULT_PROPENSITY_FLOOR) -> ScoreMatrix:
    """Two-fold cross-fitted AIPW scores in the original row order.

    ``learner`` is an unfitted reward model; a clone fit on each fold scores
    the other fold.
    """
    if log.n_rounds < 4:
        raise ValueError("cross-fitting needs at least 4 records")
    check_overlap(log, floor)
    fold_a, fold_b = crossfit_folds(log.n_rounds, seed)
    s = np.empty((log.n_rounds, log.num_actions))
    for train, held in ((fold_a, fold_b), (fold_b, fold_a)):
        part = log.subset(train)
        model = _with_actions(learner, log.num_actions).fit(part.covariates, part.rewards, part.actions)
        target = log.subset(held)
        s[held] = _aipw_from_predictions(target, _reward_matrix(model, target))
    return ScoreMatrix(s, EstimatorTag.AIPW)


def estimate(policy, scores, target: str = TARGET_FIXED) -> tuple[float, VarianceReport]:
    """Point estimate plus its plug-in variance; a single record has NaN spread."""
    z = per_record_values(policy, scores)
    if z.shape[0] < 2:
        return float(z.mean()), VarianceReport(0.0, float("nan"), int(z.shape[0]), target)
    return float(z.mean()), _variance_of(z, target)


def _sequential_scores(log: LoggedBanditData, row_for: Callable[[int], np.ndarray],
                       lam: float, reward_model, floor: float):
    """Walk the log in order, scoring round t with a model fit on rounds < t."""
    check_overlap(log, floor)
    t_max, k = log.n_rounds, log.num_actions
    frozen = None if reward_model is None else _reward_matrix(reward_model, log)
    online = OnlineRidge(log.covariates.shape[1], k, lam) if frozen is None else None
    scores = np.empty((t_max, k))
    policy = np.empty((t_max, k))
    x, a, y, p = log.covariates, log.actions, log.rewards, log.chosen_props
    for t in range(t_max):
        policy[t] = row_for(t)
        f = frozen[t].copy() if frozen is not None else online.predict_row(x[t])
        resid = y[t] - f[a[t]]
        f[a[t]] += resid / p[t]
        scores[t] = f
        if online is not None:
            online.update(x[t], a[t], y[t])
    return policy, ScoreMatrix(scores, EstimatorTag.A2IPW)


def a2ipw_estimate(log: LoggedBanditData, eval_policy, lam: float = 1.0, reward_model=None,
                   floor: float = DEFAULT_PROPENSITY_FLOOR) -> tuple[float, VarianceReport]:
    """Adaptive AIPW for a chronologically ordered log.

    ``f_{t-1}`` comes from recursive ridge regression on rounds ``1..t-1``
    (zero before any data). Passing ``reward_model`` freezes the model
    instead, which turns the estimator into plain AIPW.
    """
    probs = as_probs(eval_policy)
    if probs.shape != (log.n_rounds, log.num_actions):
        raise ValueError("evaluation policy must have one row per logged round")
    _, scores = _sequential_scores(log, lambda t: probs[t], lam, reward_model, floor)
    return estimate(probs, scores)


def ap_estimate(log: LoggedBanditData, policy_updater, lam: float = 1.0, reward_model=None,
                floor: float = DEFAULT_PROPENSITY_FLOOR) -> tuple[float, VarianceReport]:
    """Average-policy-value AIPW.

    ``policy_updater(history, x)`` receives the log prefix before round t and
    the round-t covariate, and returns the evaluation row ``pi_t(. | x)``.
    The estimate targets ``(1/T) sum_t R(pi_t)``.
    """

    def row_for(t: int) -> np.ndarray:
        row = np.asarray(policy_updater(log.subset(np.arange(t)), log.covariates[t]), dtype=float)
        if row.shape != (log.num_actions,) or not is_simplex_rows(row[None, :]):
            raise ValueError(f"policy updater returned a non-simplex row at round {t}")
        return row

    policy, scores = _sequential_scores(log, row_for, lam, reward_model, floor)
    matrix = PolicyMatrix(policy, PolicyKind.SEQUENTIAL)
    return estimate(matrix, scores, TARGET_AVERAGE)


def fixed_updater(model) -> Callable:
    """Updater that ignores the history and evaluates a fitted policy model."""
    return lambda history, x: model.predict_proba(np.asarray(x, dtype=float)[None, :])[0]


def fit_rewarded_policy(log: LoggedBanditData, l2: float = 0.01, **kwargs):
    """Logistic policy imitating the actions that earned a positive reward.

    Falls back to the uniform policy when fewer than two actions have been
    rewarded.
    """
    hit = log.rewards > 0
    if np.unique(log.actions[hit]).size < 2:
        return UniformPolicyModel(log.num_actions)
    return LogisticPolicy(l2=l2, n_classes=log.num_actions, **kwargs).fit(
        log.covariates[hit], log.actions[hit]
    )


class RefittingUpdater:
    """Refits a logistic policy on the rewarded history at fixed checkpoints.

    Before the first checkpoint the policy is uniform. ``segments`` records
    ``(start_round, model)`` for every policy used, so the per-round target
    values can be recomputed from full information.
    """

    def __init__(self, checkpoints, n_actions: int, l2: float = 0.01, **kwargs):
        self.checkpoints = sorted(int(c) for c in checkpoints)
        self.n_actions = n_actions
        self.l2 = l2
        self.kwargs = kwargs
        self.segments: list[tuple[int, object]] = [(0, UniformPolicyModel(n_actions))]

    def __call__(self, history: LoggedBanditData, x) -> np.ndarray:
        t = history.n_rounds
        if t in self.checkpoints and self.segments[-1][0] != t:
            self.segments.append((t, fit_rewarded_policy(history, self.l2, **self.kwargs)))
        return self.segments[-1][1].predict_proba(np.asarray(x, dtype=float)[None, :])[0]


def itope_estimate(history: LoggedBanditData, future: LoggedBanditData, reward_learner,
                   policy_fitter: Callable[[LoggedBanditData], object] = fit_rewarded_policy,
                   floor: float = DEFAULT_PROPENSITY_FLOOR) -> tuple[float, VarianceReport]:
    """AIPW on ``future`` with the policy and reward model frozen from ``history``.

    Both nuisances see only the history log, so the estimate is centered on
    the value of the history-fitted policy conditional on the history.
    """
    if history.n_rounds < 1:
        raise ValueError("itope_estimate needs a nonempty history log")
    if future.n_rounds < 1:
        raise ValueError("itope_estimate needs a nonempty future log")
    policy = policy_fitter(history)
    model = _with_actions(reward_learner, history.num_actions).fit(
        history.covariates, history.rewards, history.actions
    )
    probs = np.asarray(policy.predict_proba(future.covariates), dtype=float)
    return estimate(probs, scores_aipw(future, model, floor), TARGET_CONDITIONAL)


def semiparametric_bound(f_star, nu_star, behavior, evaluation, theta0: Optional[float] = None) -> float:
    """Efficiency bound ``E[sum_a pi_e^2 nu / pi_b + (sum_a pi_e f - theta0)^2]``.

    Averages over the rows of the supplied covariate sample. ``theta0``
    defaults to the sample mean of ``sum_a pi_e f``.
    """
    f = np.asarray(f_star, dtype=float)
    nu = np.asarray(nu_star, dtype=float)
    pb = as_probs(behavior)
    pe = as_probs(evaluation)
    if not (f.shape == nu.shape == pb.shape == pe.shape):
        raise ValueError("f_star, nu_star, behavior and evaluation must share one shape")
    if np.any((pb <= 0) & (pe > 0)):
        raise ValueError("behavior probability is 0 where the evaluation policy is positive")
    safe = np.where(pb > 0, pb, 1.0)
    ratio = np.where(pe > 0, pe * pe * nu / safe, 0.0)
    direct = np.einsum("tk,tk->t", pe, f)
    if theta0 is None:
        theta0 = float(direct.mean())
    return float(np.mean(ratio.sum(axis=1) + (direct - theta0) ** 2))
