"""Combining logs collected by several behavior policies.

Two routes are provided. The pooled route treats the union of the logs as
one sample whose propensity is the equal-weight mixture of the behavior
policies (valid when each record's logger is assigned uniformly at random).
The stratified route estimates the value separately on each log and fuses
the per-stratum estimates with inverse-variance (GMM) weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import SIMPLEX_ATOL, LoggedBanditData, PolicyMatrix, as_probs, per_record_values
from .estimators import aipw_crossfit, semiparametric_bound
from .models import RidgeRewardModel
from .synthetic import SyntheticSpec, policy_value, replication_rng, two_logger_sim


def mixture_propensity(policies: Sequence) -> PolicyMatrix:
    """Entrywise average of the behavior matrices."""
    mats = [as_probs(p) for p in policies]
    if not mats:
        raise ValueError("need at least one policy")
    if any(m.shape != mats[0].shape for m in mats):
        raise ValueError("all behavior matrices must share one shape")
    return PolicyMatrix(np.mean(mats, axis=0))


@dataclass(frozen=True)
class StratifiedEstimate:
    """Per-stratum estimates ``D_m`` and variances already scaled by ``T / T_m``."""

    d_values: np.ndarray
    sigma2: np.ndarray
    stratum_sizes: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.d_values, dtype=float)
        s = np.asarray(self.sigma2, dtype=float)
        n = np.asarray(self.stratum_sizes, dtype=np.int64)
        if d.ndim != 1 or d.size < 1 or s.shape != d.shape or n.shape != d.shape:
            raise ValueError("d_values, sigma2 and stratum_sizes must be equal-length vectors")
        if np.any(s <= 0):
            raise ValueError("stratum variances must be positive")
        object.__setattr__(self, "d_values", d)
        object.__setattr__(self, "sigma2", s)
        object.__setattr__(self, "stratum_sizes", n)

    @property
    def n_strata(self) -> int:
        return int(self.d_values.shape[0])


def stratum_estimates(logs: Sequence[LoggedBanditData], eval_policy, learner,
                      seed: int = 0) -> StratifiedEstimate:
    """Cross-fit AIPW per stratum with variance ``var(Z) * T / T_m``.

    ``eval_policy`` is either a callable ``X -> probs`` or a sequence with
    one policy matrix per stratum. Every stratum uses the same fold seed.
    """
    sizes = np.array([log.n_rounds for log in logs])
    if sizes.size == 0:
        raise ValueError("need at least one stratum")
    if np.any(sizes < 4):
        raise ValueError("each stratum needs at least 4 records for cross-fitting")
    total = sizes.sum()
    d, s2 = [], []
    for m, log in enumerate(logs):
        probs = as_probs(eval_policy(log.covariates) if callable(eval_policy) else eval_policy[m])
        z = per_record_values(probs, aipw_crossfit(log, learner, seed))
        d.append(z.mean())
        s2.append(np.var(z, ddof=1) * total / log.n_rounds)
    return StratifiedEstimate(np.array(d), np.array(s2), sizes)


def optimal_weights(sigma2) -> np.ndarray:
    inv = 1.0 / np.asarray(sigma2, dtype=float)
    return inv / inv.sum()


def proportional_weights(stratum_sizes) -> np.ndarray:
    """Weights ``T_m / T``, under which the GMM estimate matches pooling by size."""
    n = np.asarray(stratum_sizes, dtype=float)
    return n / n.sum()


def gmm_combine(est: StratifiedEstimate, weights: Union[str, Sequence[float]] = "optimal"):
    """Return ``(sum_m w_m D_m, sum_m w_m^2 sigma2_m)``."""
    if isinstance(weights, str):
        if weights != "optimal":
            raise ValueError(f"unknown weight rule {weights!r}")
        w = optimal_weights(est.sigma2)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != est.d_values.shape:
            raise ValueError("one weight per stratum is required")
        if np.any(w < -SIMPLEX_ATOL) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise ValueError("weights must lie in the simplex")
    return float(w @ est.d_values), float(w * w @ est.sigma2)


def var_ss(est_or_sigma2) -> float:
    """``(sum_m 1 / sigma2_m)^-1``, the variance at the optimal weights."""
    s = est_or_sigma2.sigma2 if isinstance(est_or_sigma2, StratifiedEstimate) else est_or_sigma2
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("stratum variances must be positive")
    return float(1.0 / np.sum(1.0 / s))


def var_ms(f_star, nu_star, mixture, evaluation) -> float:
    """Efficiency bound of the pooled sample under the mixture propensity."""
    return semiparametric_bound(f_star, nu_star, mixture, evaluation)


def population_stratum_variances(f_star, nu_star, behaviors: Sequence, evaluation,
                                 stratum_sizes) -> np.ndarray:
    """``sigma2_m = (T / T_m) * bound(pi_b_m)`` from known nuisances."""
    n = np.asarray(stratum_sizes, dtype=float)
    bounds = np.array([semiparametric_bound(f_star, nu_star, b, evaluation) for b in behaviors])
    return bounds * n.sum() / n


def pooled_log(logs: Sequence[LoggedBanditData], behaviors: Sequence) -> LoggedBanditData:
    """Union of the logs with propensities replaced by the equal-weight mixture.

    ``behaviors[m]`` maps covariates to logger ``m``'s action probabilities,
    so the mixture can be evaluated at records collected by other loggers.
    """
    X = np.vstack([log.covariates for log in logs])
    mix = mixture_propensity([as_probs(b(X)) if callable(b) else _tile(b, X) for b in behaviors])
    return LoggedBanditData(
        X,
        np.concatenate([log.actions for log in logs]),
        np.concatenate([log.rewards for log in logs]),
        mix.probs,
        logs[0].reward_bound,
    )


def _tile(vec, X) -> np.ndarray:
    return np.tile(np.asarray(vec, dtype=float), (X.shape[0], 1))


GMM_COLUMNS = ("AIPW_A", "AIPW_B", "MAIPW", "GMM")


@dataclass(frozen=True)
class GMMStudy:
    """Per-replication estimates of the four two-logger estimators."""

    estimates: np.ndarray
    truth: float
    columns: tuple[str, ...] = GMM_COLUMNS

    def rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self.estimates - self.truth) ** 2, axis=0))

    def sd(self) -> np.ndarray:
        return np.std(self.estimates, axis=0, ddof=1)


def gmm_experiment(spec: SyntheticSpec, t_a: int, t_b: int, policy_a, policy_b, evaluation,
                   reps: int, seed: int, learner=None, truth_samples: int = 200_000,
                   mapper=map) -> GMMStudy:
    """Monte Carlo comparison of single-logger AIPW, pooled mixture AIPW and GMM.

    ``policy_a``, ``policy_b`` and ``evaluation`` are context-free probability
    vectors or callables ``X -> probs``. The truth is the population value of
    ``evaluation`` estimated on ``truth_samples`` fresh covariates.
    """
    if t_a < 4 or t_b < 4:
        raise ValueError("each stratum needs at least 4 records")
    if reps < 1:
        raise ValueError("reps must be positive")
    learner = RidgeRewardModel(lam=1.0) if learner is None else learner
    eval_fn = evaluation if callable(evaluation) else (lambda X: _tile(evaluation, X))
    truth = policy_value(spec, eval_fn, truth_samples, seed=[int(seed), 10**9])

    def one(r: int) -> list[float]:
        rng = replication_rng(seed, r)
        data = two_logger_sim(spec, t_a, t_b, policy_a, policy_b, rng)
        fold_seed = int(rng.integers(2**31))
        est = stratum_estimates(data.logs, eval_fn, learner, fold_seed)
        pooled = pooled_log(data.logs, (policy_a, policy_b))
        z = per_record_values(eval_fn(pooled.covariates), aipw_crossfit(pooled, learner, fold_seed))
        return [est.d_values[0], est.d_values[1], float(z.mean()), gmm_combine(est)[0]]

    return GMMStudy(np.array(list(mapper(one, range(reps))), dtype=float), truth)
