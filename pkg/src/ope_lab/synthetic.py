"""Synthetic bandit data.

The covariate model draws ``X ~ N(0, I_d)`` and three action scores

    g1(x) = sum_j x_j,   g2(x) = sum_j W_j x_j^2,   g3(x) = sum_j W_j |x_j|

with a sign vector ``W`` fixed per spec seed. One category ``c`` is drawn from
``softmax(g(x))`` and the potential outcomes are ``Y(a) = 1[a = c]``, so the
conditional mean is ``f*(a, x) = softmax(g(x))_a`` and the conditional
variance ``nu*(a, x) = f*(1 - f*)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import FullInformationData, LoggedBanditData, PolicyMatrix, as_probs, is_simplex_rows
from .ingest import LabeledDataset
from .models import LogisticPolicy
from .policies import UniformPolicyModel

RandomLike = Union[int, Sequence[int], np.random.Generator]


def as_generator(seed: RandomLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep`` under master seed ``seed``."""
    return np.random.default_rng([int(seed), int(rep)])


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF on a single uniform."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def _softmax(g: np.ndarray) -> np.ndarray:
    z = np.exp(g - g.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int = 10
    n_actions: int = 3
    seed: int = 0
    signs: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.n_actions != 3:
            raise ValueError("the synthetic outcome model defines exactly 3 actions")
        w = self.signs
        if w is None:
            w = np.random.default_rng(self.seed).choice([-1.0, 1.0], size=self.dim)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,) or not np.all(np.isin(w, (-1.0, 1.0))):
            raise ValueError("signs must be a length-dim vector of +/-1")
        w.setflags(write=False)
        object.__setattr__(self, "signs", w)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.column_stack([X.sum(axis=1), (X * X) @ self.signs, np.abs(X) @ self.signs])

    def f_star(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.scores(X))


def gen_full_information(spec: SyntheticSpec, n_rounds: int, seed: RandomLike) -> FullInformationData:
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    rng = as_generator(seed)
    X = rng.standard_normal((n_rounds, spec.dim))
    p = spec.f_star(X)
    c = sample_categorical(p, rng)
    y = np.zeros_like(p)
    y[np.arange(n_rounds), c] = 1.0
    return FullInformationData(X, y, p, p * (1.0 - p), c)


def make_bandit_feedback(full: FullInformationData, behavior, seed: RandomLike) -> LoggedBanditData:
    probs = as_probs(behavior)
    if probs.shape != full.potential_outcomes.shape:
        raise ValueError(f"behavior shape {probs.shape} does not match outcomes {full.potential_outcomes.shape}")
    if not is_simplex_rows(probs):
        raise ValueError("behavior rows must lie in the probability simplex")
    a = sample_categorical(probs, as_generator(seed))
    y = full.potential_outcomes[np.arange(full.n_rounds), a]
    return LoggedBanditData(full.covariates, a, y, probs, reward_bound=1.0)


def classification_full_information(data: LabeledDataset) -> FullInformationData:
    y = np.zeros((len(data), data.class_count))
    y[np.arange(len(data)), data.labels] = 1.0
    return FullInformationData(data.features, y, labels=data.labels)


def classification_to_bandit(data: LabeledDataset, behavior, seed: RandomLike):
    """Bandit log with reward ``1[action = label]`` plus the full-information record."""
    full = classification_full_information(data)
    return make_bandit_feedback(full, behavior, seed), full


def classification_corpus(n_samples: int = 5000, n_classes: int = 5, dim: int = 20,
                          seed: int = 0, noise: float = 0.5) -> LabeledDataset:
    """Nonlinear synthetic classification data for the selection experiments.

    Labels are the argmax of linear plus quadratic class scores perturbed by
    Gumbel noise, so no single learner family fits them exactly.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, dim))
    lin = rng.standard_normal((dim, n_classes)) / np.sqrt(dim)
    quad = rng.standard_normal((dim, n_classes)) / np.sqrt(dim)
    scores = 2.0 * X @ lin + (X * X - 1.0) @ quad + noise * rng.gumbel(size=(n_samples, n_classes))
    return LabeledDataset(X, np.argmax(scores, axis=1), n_classes)


def policy_value(spec: SyntheticSpec, policy_fn: Callable[[np.ndarray], np.ndarray],
                 n_samples: int = 200_000, seed: RandomLike = 12345) -> float:
    """Population value ``E[sum_a pi(a|X) f*(a, X)]`` by Monte Carlo over fresh covariates."""
    X = as_generator(seed).standard_normal((n_samples, spec.dim))
    return float(np.einsum("tk,tk->t", as_probs(policy_fn(X)), spec.f_star(X)).mean())


@dataclass(frozen=True)
class BiasTable:
    """Per-replication ``error1`` (in-sample) and ``error2`` (independent sample)."""

    error1: np.ndarray
    error2: np.ndarray
    sizes: tuple[int, int, int]

    def summary(self) -> dict:
        r = self.error1.shape[0]
        out = {}
        for name, e in (("error1", self.error1), ("error2", self.error2)):
            sd = float(np.std(e, ddof=1)) if r > 1 else float("nan")
            out[name] = {"mean": float(e.mean()), "sd": sd, "se": sd / np.sqrt(r)}
        return out


def bias_replication(spec: SyntheticSpec, t1: int, t2: int, t3: int, seed: int, rep: int,
                     policy: str = "logistic", l2: float = 0.01) -> tuple[float, float]:
    """``(error1, error2)`` for one replication; see :func:`bias_experiment`."""
    k = spec.n_actions
    rng = replication_rng(seed, rep)
    s1 = gen_full_information(spec, t1, rng)
    s2 = gen_full_information(spec, t2, rng)
    s3 = gen_full_information(spec, t3, rng)
    model = UniformPolicyModel(k)
    if policy == "logistic" and np.unique(s1.labels).size >= 2:
        model = LogisticPolicy(l2=l2, n_classes=k).fit(s1.covariates, s1.labels)
    a2 = sample_categorical(model.predict_proba(s2.covariates), rng)
    truth = float(s2.potential_outcomes[np.arange(t2), a2].mean())
    r1 = float(np.einsum("tk,tk->t", model.predict_proba(s1.covariates), s1.potential_outcomes).mean())
    r3 = float(np.einsum("tk,tk->t", model.predict_proba(s3.covariates), s3.potential_outcomes).mean())
    return truth - r1, truth - r3


def bias_experiment(spec: SyntheticSpec, t1: int, t2: int, t3: int, reps: int, seed: int,
                    policy: str = "logistic", l2: float = 0.01, mapper=map) -> BiasTable:
    """Compare in-sample and independent-sample plug-in values against the truth.

    Per replication the evaluation policy is fit on sample 1 (multinomial
    logistic regression of the realized category on X). The truth is the
    average realized outcome on sample 2 with actions drawn from that policy.
    ``error1`` plugs sample 1 back in; ``error2`` uses the independent
    sample 3. ``policy="uniform"`` skips training.

    ``mapper`` must preserve order (``map`` or an executor's ``map``).
    """
    for name, v in (("t1", t1), ("t2", t2), ("t3", t3), ("reps", reps)):
        if v < 1:
            raise ValueError(f"{name} must be positive")
    if policy not in ("logistic", "uniform"):
        raise ValueError(f"unknown policy {policy!r}")
    rows = list(mapper(lambda r: bias_replication(spec, t1, t2, t3, seed, r, policy, l2), range(reps)))
    errors = np.array(rows, dtype=float).reshape(reps, 2)
    return BiasTable(errors[:, 0].copy(), errors[:, 1].copy(), (t1, t2, t3))


def _behavior_matrix(policy, X: np.ndarray, k: int) -> np.ndarray:
    if callable(policy):
        return as_probs(policy(X))
    vec = np.asarray(policy, dtype=float)
    if vec.shape == (k,):
        return np.tile(vec, (X.shape[0], 1))
    return vec


@dataclass(frozen=True)
class TwoLoggerData:
    """Independent logs from one outcome model, one per behavior policy (stratum)."""

    logs: tuple[LoggedBanditData, ...]
    full: tuple[FullInformationData, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(log.n_rounds for log in self.logs)

    def pooled(self, behavior_override: Optional[np.ndarray] = None) -> LoggedBanditData:
        props = np.vstack([log.behavior_props for log in self.logs])
        if behavior_override is not None:
            props = behavior_override
        return LoggedBanditData(
            np.vstack([log.covariates for log in self.logs]),
            np.concatenate([log.actions for log in self.logs]),
            np.concatenate([log.rewards for log in self.logs]),
            props,
            reward_bound=1.0,
        )


def two_logger_sim(spec: SyntheticSpec, t_a: int, t_b: int, policy_a, policy_b,
                   seed: RandomLike) -> TwoLoggerData:
    """Two logs of sizes ``(t_a, t_b)``; each policy is a context-free vector or ``X -> probs``."""
    if t_a < 2 or t_b < 2:
        raise ValueError("each stratum needs at least 2 records")
    rng = as_generator(seed)
    logs, fulls = [], []
    for n, pol in ((t_a, policy_a), (t_b, policy_b)):
        full = gen_full_information(spec, n, rng)
        behavior = PolicyMatrix(_behavior_matrix(pol, full.covariates, spec.n_actions))
        logs.append(make_bandit_feedback(full, behavior, rng))
        fulls.append(full)
    return TwoLoggerData(tuple(logs), tuple(fulls))


def adaptive_log(spec: SyntheticSpec, n_rounds: int, seed: RandomLike,
                 greedy_weight: float = 0.6, decay: float = 100.0) -> tuple[LoggedBanditData, FullInformationData]:
    """Log whose behavior policy adapts to the history and converges to uniform.

    Round ``t`` plays ``w_t * greedy + (1 - w_t) * uniform`` with
    ``w_t = greedy_weight / (1 + t / decay)``; ``greedy`` is one-hot on the
    action with the best running mean reward so far (lowest index on ties).
    """
    rng = as_generator(seed)
    full = gen_full_information(spec, n_rounds, rng)
    k = spec.n_actions
    u = rng.random(n_rounds)
    sums = np.zeros(k)
    counts = np.zeros(k)
    props = np.empty((n_rounds, k))
    actions = np.empty(n_rounds, dtype=np.int64)
    for t in range(n_rounds):
        means = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
        w = greedy_weight / (1.0 + t / decay)
        row = np.full(k, (1.0 - w) / k)
        row[int(np.argmax(means))] += w
        props[t] = row
        a = min(int((u[t] >= np.cumsum(row)).sum()), k - 1)
        actions[t] = a
        sums[a] += full.potential_outcomes[t, a]
        counts[a] += 1
    rewards = full.potential_outcomes[np.arange(n_rounds), actions]
    return LoggedBanditData(full.covariates, actions, rewards, props, reward_bound=1.0), full
