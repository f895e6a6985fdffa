"""Choosing the best of several candidate evaluation policies from logged data.

A :class:`CandidateTable` holds one estimate per (candidate policy, OPE
estimator). Criteria collapse the table to a single selected row; the regret
of a selection is the true value of the best candidate minus the true value
of the selected one.

Three protocols decide which data trains the candidates and which data
evaluates them:

* ``isope``  trains and evaluates on the same sample (optimistic);
* ``ope2d``  evaluates on a sample independent of candidate training;
* ``opcv``   swaps two folds of one sample and averages the tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import clone

from .core import LoggedBanditData, PolicyMatrix, ScoreMatrix, per_record_values, true_policy_value
from .estimators import aipw_crossfit, scores_dm, scores_ipw
from .game import GameSolution, solve_zero_sum
from .inference import efficient_weights
from .ingest import LabeledDataset, SplitPlan, split
from .models import CVGrid, KernelRidgeRewardModel, LogisticPolicy, RidgeRewardModel, cross_validate
from .policies import deterministic_from_classifier, mix, uniform_policy
from .synthetic import classification_full_information, make_bandit_feedback, replication_rng

ESTIMATORS = ("IPW", "DM LR", "DM KR", "AIPW")
CRITERIA = ("IPW", "DM LR", "DM KR", "AIPW", "MEAN", "Minimax", "Mix", "Maxmax")
POOLED_CRITERIA = ("MEAN", "Weighted", "Minimax", "Mix", "Maxmax")
ISOPE_CAVEAT = "candidates were trained on the evaluation sample; estimates are optimistic"


@dataclass(frozen=True)
class CandidateTable:
    """``values[l, e]`` is estimator ``e``'s estimate of candidate ``l``."""

    values: np.ndarray
    estimator_tags: tuple[str, ...]
    policies: Optional[tuple[PolicyMatrix, ...]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("candidate table must be a nonempty L x E matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("candidate table entries must be finite")
        if len(self.estimator_tags) != v.shape[1]:
            raise ValueError("one estimator tag per column is required")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "estimator_tags", tuple(self.estimator_tags))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, tag: str) -> np.ndarray:
        return self.values[:, self.estimator_tags.index(tag)]


def _values(table) -> np.ndarray:
    return table.values if isinstance(table, CandidateTable) else np.asarray(table, dtype=float)


def criterion_column(table, estimator: int | str) -> int:
    """Argmax of a single estimator's column."""
    v = _values(table)
    e = table.estimator_tags.index(estimator) if isinstance(estimator, str) else estimator
    return int(np.argmax(v[:, e]))


def criterion_mean(table) -> int:
    return int(np.argmax(_values(table).mean(axis=1)))


def criterion_weighted(table, Sigma) -> int:
    """Argmax of rows combined with the efficient weights ``Sigma^-1 1 / 1^T Sigma^-1 1``."""
    return int(np.argmax(_values(table) @ efficient_weights(Sigma)))


def criterion_minimax(table) -> int:
    return int(np.argmax(_values(table).min(axis=1)))


def criterion_maxmax(table) -> int:
    return int(np.argmax(_values(table).max(axis=1)))


def criterion_mix(table) -> tuple[GameSolution, int]:
    """Row player's equilibrium mixture over candidates and its heaviest component."""
    sol = solve_zero_sum(_values(table))
    p = sol.p_star
    return sol, int(np.flatnonzero(p >= p.max() - 1e-12)[0])


def payoff_from_scores(policies: Sequence, scores: Sequence) -> np.ndarray:
    """``C[l, e] = mean_t <pi_l(x_t), Gamma^e_t>``."""
    shapes = {np.shape(s.scores if isinstance(s, ScoreMatrix) else s) for s in scores}
    if len(shapes) != 1:
        raise ValueError("score matrices must share one shape")
    return np.array([[per_record_values(p, s).mean() for s in scores] for p in policies])


def estimator_covariance(policies: Sequence, scores: Sequence) -> np.ndarray:
    """Covariance of the per-record values across estimators, divided by ``T``.

    Averaged over the candidate policies.
    """
    covs = []
    for p in policies:
        Z = np.column_stack([per_record_values(p, s) for s in scores])
        covs.append(np.atleast_2d(np.cov(Z, rowvar=False)) / Z.shape[0])
    return np.mean(covs, axis=0)


def regret(selected: int, true_values) -> float:
    v = np.asarray(true_values, dtype=float)
    return float(v.max() - v[selected])


def random_selection_regret(true_values) -> float:
    """Expected regret of picking a candidate uniformly at random."""
    v = np.asarray(true_values, dtype=float)
    return float(v.max() - v.mean())


def select_all(table: CandidateTable, criteria: Sequence[str] = CRITERIA,
               Sigma: Optional[np.ndarray] = None) -> tuple[dict, Optional[np.ndarray]]:
    """Selected index per criterion, plus the equilibrium mixture when Mix runs."""
    picks, mixture = {}, None
    for name in criteria:
        if name in table.estimator_tags:
            picks[name] = criterion_column(table, name)
        elif name == "MEAN":
            picks[name] = criterion_mean(table)
        elif name == "Weighted":
            if Sigma is None:
                raise ValueError("the Weighted criterion needs an estimator covariance")
            picks[name] = criterion_weighted(table, Sigma)
        elif name == "Minimax":
            picks[name] = criterion_minimax(table)
        elif name == "Maxmax":
            picks[name] = criterion_maxmax(table)
        elif name == "Mix":
            sol, picks[name] = criterion_mix(table)
            mixture = sol.p_star
        else:
            raise ValueError(f"unknown criterion {name!r}")
    return picks, mixture


def estimator_scores(log: LoggedBanditData, estimators: Sequence[str] = ESTIMATORS,
                     grid: CVGrid = CVGrid(), seed: int = 0) -> list[ScoreMatrix]:
    """Score matrices for the named estimators; reward models are tuned by CV on the log."""
    K = log.num_actions
    X, y, a = log.covariates, log.rewards, log.actions
    out = []
    kr_params = None
    for name in estimators:
        if name == "IPW":
            out.append(scores_ipw(log))
        elif name == "DM LR":
            lr = RidgeRewardModel(n_actions=K)
            lr.set_params(**cross_validate(lr, X, y, a, grid, seed))
            out.append(scores_dm(log, lr.fit(X, y, a)))
        elif name in ("DM KR", "AIPW"):
            if kr_params is None:
                kr_params = cross_validate(KernelRidgeRewardModel(n_actions=K), X, y, a, grid, seed)
            kr = KernelRidgeRewardModel(n_actions=K, **kr_params)
            if name == "DM KR":
                out.append(scores_dm(log, kr.fit(X, y, a)))
            else:
                out.append(aipw_crossfit(log, kr, seed))
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return out


def default_candidates(random_state: int = 0) -> list[LogisticPolicy]:
    """Six candidate learners: three feature maps times two penalty strengths."""
    return [
        LogisticPolicy(feature_map=fm, l2=l2, random_state=random_state)
        for fm in ("linear", "poly2", "rbf")
        for l2 in (0.01, 1.0)
    ]


def fit_candidates(learners: Sequence, data: LabeledDataset) -> list:
    """Clone and fit every learner on ``data``'s labels; ``None`` learners are fixed policies."""
    fitted = []
    for learner in learners:
        if hasattr(learner, "get_params"):
            model = clone(learner)
            if "n_classes" in model.get_params():
                model.set_params(n_classes=data.class_count)
            fitted.append(model.fit(data.features, data.labels))
        else:
            fitted.append(learner)
    return fitted


def policy_matrices(models: Sequence, X) -> list[PolicyMatrix]:
    return [PolicyMatrix(np.asarray(m.predict_proba(X), dtype=float)) for m in models]


def true_values(models: Sequence, truth: LabeledDataset) -> np.ndarray:
    full = classification_full_information(truth)
    return np.array([true_policy_value(full, p) for p in policy_matrices(models, truth.features)])


def candidate_table(models: Sequence, log: LoggedBanditData, estimators: Sequence[str] = ESTIMATORS,
                    grid: CVGrid = CVGrid(), seed: int = 0) -> tuple[CandidateTable, np.ndarray]:
    """Candidate table on ``log`` and the estimator covariance used by ``Weighted``."""
    policies = policy_matrices(models, log.covariates)
    scores = estimator_scores(log, estimators, grid, seed)
    C = payoff_from_scores(policies, scores)
    return CandidateTable(C, tuple(estimators), tuple(policies)), estimator_covariance(policies, scores)


@dataclass(frozen=True)
class SelectionOutcome:
    table: CandidateTable
    true_values: np.ndarray
    selected: dict
    regret: dict
    random_regret: float
    mixture: Optional[np.ndarray] = None
    caveat: str = ""


def _outcome(table, sigma, truth_vals, criteria, caveat="") -> SelectionOutcome:
    picks, mixture = select_all(table, criteria, sigma)
    regrets = {name: regret(i, truth_vals) for name, i in picks.items()}
    return SelectionOutcome(table, truth_vals, picks, regrets,
                            random_selection_regret(truth_vals), mixture, caveat)


def oracle_table(truth_vals, estimators: Sequence[str] = ESTIMATORS) -> CandidateTable:
    v = np.asarray(truth_vals, dtype=float)
    return CandidateTable(np.tile(v[:, None], (1, len(estimators))), tuple(estimators))


def run_ope2d(models: Sequence, log: LoggedBanditData, truth: LabeledDataset,
              estimators: Sequence[str] = ESTIMATORS, criteria: Sequence[str] = CRITERIA,
              seed: int = 0, grid: CVGrid = CVGrid(), oracle: bool = False) -> SelectionOutcome:
    """Select among ``models`` (already fit on an independent training set) using ``log``."""
    truth_vals = true_values(models, truth)
    if oracle:
        return _outcome(oracle_table(truth_vals, estimators), np.eye(len(estimators)), truth_vals, criteria)
    table, sigma = candidate_table(models, log, estimators, grid, seed)
    return _outcome(table, sigma, truth_vals, criteria)


def run_isope(learners: Sequence, data: LabeledDataset, log: LoggedBanditData, truth: LabeledDataset,
              estimators: Sequence[str] = ESTIMATORS, criteria: Sequence[str] = CRITERIA,
              seed: int = 0, grid: CVGrid = CVGrid(), models: Optional[Sequence] = None) -> SelectionOutcome:
    """Train candidates on ``data`` and evaluate them on ``log``, collected on the same rows."""
    if len(data) != log.n_rounds:
        raise ValueError("the log must be collected on the training rows")
    models = fit_candidates(learners, data) if models is None else models
    out = run_ope2d(models, log, truth, estimators, criteria, seed, grid)
    return SelectionOutcome(out.table, out.true_values, out.selected, out.regret,
                            out.random_regret, out.mixture, ISOPE_CAVEAT)


def opcv_folds(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    half = (n + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def run_opcv(learners: Sequence, data: LabeledDataset, log: LoggedBanditData, truth: LabeledDataset,
             estimators: Sequence[str] = ESTIMATORS, criteria: Sequence[str] = CRITERIA,
             seed: int = 0, grid: CVGrid = CVGrid(), folds=None,
             fold_models: Optional[Sequence] = None, full_models: Optional[Sequence] = None) -> SelectionOutcome:
    """Two-fold cross-validated selection.

    Candidates fit on one fold are evaluated on the other fold's log, the two
    tables are averaged, and regret compares candidates refit on all of
    ``data``.
    """
    if len(data) != log.n_rounds:
        raise ValueError("the log must be collected on the cross-validation rows")
    if len(data) < 8:
        raise ValueError("cross-validated selection needs at least 8 rows")
    folds = opcv_folds(len(data), seed) if folds is None else folds
    tables, sigmas = [], []
    for k, (train, held) in enumerate(((folds[0], folds[1]), (folds[1], folds[0]))):
        models = fit_candidates(learners, data.subset(train)) if fold_models is None else fold_models[k]
        table, sigma = candidate_table(models, log.subset(held), estimators, grid, seed)
        tables.append(table.values)
        sigmas.append(sigma)
    table = CandidateTable(np.mean(tables, axis=0), tuple(estimators))
    full = fit_candidates(learners, data) if full_models is None else full_models
    return _outcome(table, np.mean(sigmas, axis=0), true_values(full, truth), criteria)


@dataclass(frozen=True)
class BepsResult:
    """Regret per (alpha, replication, criterion) plus the random-selection baseline."""

    alphas: tuple[float, ...]
    criteria: tuple[str, ...]
    regrets: np.ndarray
    random_regrets: np.ndarray
    mode: str

    def mean(self) -> np.ndarray:
        return self.regrets.mean(axis=1)

    def sd(self) -> np.ndarray:
        r = self.regrets.shape[1]
        return self.regrets.std(axis=1, ddof=1) if r > 1 else np.zeros(self.mean().shape)


def behavior_classifier(data: LabeledDataset) -> LogisticPolicy:
    return LogisticPolicy(l2=0.01, n_classes=data.class_count).fit(data.features, data.labels)


def beps_experiment(data: LabeledDataset, mode: str = "ope2d", alphas: Sequence[float] = (0.7, 0.4, 0.0),
                    reps: int = 10, seed: int = 0, learners: Optional[Sequence] = None,
                    estimators: Sequence[str] = ESTIMATORS, criteria: Sequence[str] = CRITERIA,
                    sizes: Optional[Sequence[int]] = None, oracle: bool = False,
                    grid: CVGrid = CVGrid(), mapper=map) -> BepsResult:
    """Repeat a selection protocol over seeded splits of ``data`` for every alpha.

    ``data`` should be standardized. Per replication the behavior classifier
    is trained first, then the candidates; both are reused across alphas.
    The behavior policy on the logged rows is ``alpha * pi_d + (1 - alpha) * uniform``.
    """
    if mode not in ("ope2d", "isope", "opcv"):
        raise ValueError(f"unknown mode {mode!r}")
    if reps < 1:
        raise ValueError("reps must be positive")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {a}")
    learners = default_candidates() if learners is None else list(learners)

    def one(r: int) -> tuple[np.ndarray, np.ndarray]:
        return _beps_replication(data, mode, alphas, seed, r, learners, estimators, criteria,
                                 sizes, oracle, grid)

    rows = list(mapper(one, range(reps)))
    regrets = np.stack([row[0] for row in rows], axis=1)
    baseline = np.stack([row[1] for row in rows], axis=1)
    return BepsResult(tuple(alphas), tuple(criteria), regrets, baseline, mode)


def _beps_replication(data, mode, alphas, seed, r, learners, estimators, criteria, sizes, oracle, grid):
    regrets = np.empty((len(alphas), len(criteria)))
    baseline = np.empty(len(alphas))
    rng = replication_rng(seed, r)
    plan_seed = int(rng.integers(2**31))
    if mode == "opcv":
        plan = SplitPlan.opcv(plan_seed, *(sizes or (1000, 2000, 2000)))
        behavior_set, log_set, truth = split(data, plan)
    else:
        plan = SplitPlan.ope2d(plan_seed, *(sizes or (1000, 1000, 1000, 2000)))
        behavior_set, train_set, log_set, truth = split(data, plan)
    pi_d = behavior_classifier(behavior_set)
    det = deterministic_from_classifier(pi_d, log_set.features)
    unif = uniform_policy(len(log_set), data.class_count)
    full = classification_full_information(log_set)
    cached: dict = {}
    for i, alpha in enumerate(alphas):
        log = make_bandit_feedback(full, mix(alpha, det, unif),
                                   np.random.default_rng([int(seed), int(r), i + 1]))
        est_seed = int(rng.integers(2**31))
        if mode == "ope2d":
            if "m" not in cached:
                cached["m"] = fit_candidates(learners, train_set)
            out = run_ope2d(cached["m"], log, truth, estimators, criteria, est_seed, grid, oracle)
        elif mode == "isope":
            if "m" not in cached:
                cached["m"] = fit_candidates(learners, log_set)
            if oracle:
                out = run_ope2d(cached["m"], log, truth, estimators, criteria, est_seed, grid, True)
            else:
                out = run_isope(learners, log_set, log, truth, estimators, criteria, est_seed, grid,
                                cached["m"])
        else:
            if "folds" not in cached:
                folds = opcv_folds(len(log_set), plan_seed)
                cached["folds"] = folds
                cached["fold_models"] = [fit_candidates(learners, log_set.subset(f)) for f in folds]
                cached["full"] = fit_candidates(learners, log_set)
            if oracle:
                out = run_ope2d(cached["full"], log, truth, estimators, criteria, est_seed, grid, True)
            else:
                out = run_opcv(learners, log_set, log, truth, estimators, criteria, est_seed, grid,
                               cached["folds"], cached["fold_models"], cached["full"])
        regrets[i] = [out.regret[c] for c in criteria]
        baseline[i] = out.random_regret
    return regrets, baseline
