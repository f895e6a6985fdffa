import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ope_lab.core import EstimatorTag, LoggedBanditData, OverlapError, inner_value, true_policy_value
from ope_lab.estimators import (TARGET_AVERAGE, TARGET_CONDITIONAL, RefittingUpdater, a2ipw_estimate,
                                aipw_crossfit, ap_estimate, crossfit_folds, empirical_variance, estimate,
                                fit_rewarded_policy, fixed_updater, itope_estimate, scores_aipw, scores_dm,
                                scores_ipw, semiparametric_bound)
from ope_lab.models import ConstantRewardModel, RidgeRewardModel
from ope_lab.policies import UniformPolicyModel
from ope_lab.synthetic import (SyntheticSpec, gen_full_information, make_bandit_feedback, policy_value,
                               replication_rng)


class _Table:
    """Reward model returning fixed rows."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)

    def predict_all(self, X):
        return self.rows[: len(X)]


def _log(actions, rewards, props, X=None):
    props = np.asarray(props, dtype=float)
    X = np.zeros((props.shape[0], 1)) if X is None else X
    return LoggedBanditData(X, actions, rewards, props)


def _random_log(seed, n=40, k=3, d=2):
    rng = np.random.default_rng(seed)
    props = rng.dirichlet(np.ones(k), size=n) * 0.9 + 0.1 / k
    a = np.array([rng.choice(k, p=p) for p in props])
    return LoggedBanditData(rng.normal(size=(n, d)), a, rng.normal(size=n), props)


def test_ipw_rows():
    s = scores_ipw(_log([1], [3.0], [[0.25, 0.75]]))
    np.testing.assert_allclose(s.scores, [[0, 4]])
    assert s.estimator_tag is EstimatorTag.IPW
    np.testing.assert_allclose(scores_ipw(_log([0], [1.0], [[0.5, 0.5]])).scores, [[2, 0]])
    np.testing.assert_array_equal(scores_ipw(_log([0], [0.0], [[0.5, 0.5]])).scores, [[0, 0]])


def test_ipw_overlap_error():
    with pytest.raises(OverlapError):
        scores_ipw(_log([1], [1.0], [[1.0, 0.0]]))


def test_dm_constant_and_reward_independent():
    log = _random_log(0)
    m = ConstantRewardModel(0.3, n_actions=3).fit(log.covariates)
    np.testing.assert_array_equal(scores_dm(log, m).scores, 0.3)
    ridge = RidgeRewardModel(n_actions=3).fit(log.covariates, log.rewards, log.actions)
    other = log.with_rewards(log.rewards + 5)
    np.testing.assert_array_equal(scores_dm(log, ridge).scores, scores_dm(other, ridge).scores)


def test_dm_exact_model_equals_truth():
    spec = SyntheticSpec(seed=1)
    full = gen_full_information(spec, 300, 2)
    log = make_bandit_feedback(full, np.full((300, 3), 1 / 3), 3)
    pe = spec.f_star(full.covariates)
    oracle_full = type(full)(full.covariates, full.f_star)
    assert inner_value(pe, scores_dm(log, _Table(full.f_star))) == pytest.approx(
        true_policy_value(oracle_full, pe), abs=1e-9)


def test_aipw_hand_case():
    s = scores_aipw(_log([0], [2.0], [[0.5, 0.5]]), _Table([[1.0, 3.0]]))
    np.testing.assert_allclose(s.scores, [[3, 3]])


def test_aipw_zero_model_is_ipw():
    log = _random_log(1)
    np.testing.assert_array_equal(scores_aipw(log, _Table(np.zeros((40, 3)))).scores, scores_ipw(log).scores)


def test_aipw_exact_fit_equals_dm():
    log = _random_log(2)
    f = np.random.default_rng(0).normal(size=(40, 3))
    log = log.with_rewards(f[np.arange(40), log.actions])
    np.testing.assert_allclose(scores_aipw(log, _Table(f)).scores, f, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_aipw_is_dm_plus_residual_ipw(seed):
    log = _random_log(seed)
    f = np.random.default_rng(seed + 1).normal(size=(40, 3))
    resid = log.with_rewards(log.rewards - f[np.arange(40), log.actions])
    expected = scores_dm(log, _Table(f)).scores + scores_ipw(resid).scores
    np.testing.assert_array_equal(scores_aipw(log, _Table(f)).scores, expected)


def test_crossfit_folds_rule():
    a, b = crossfit_folds(7, 3)
    perm = np.random.default_rng(3).permutation(7)
    assert a.tolist() == sorted(perm[:4].tolist())
    assert b.tolist() == sorted(perm[4:].tolist())


def test_crossfit_zero_learner_and_determinism():
    log = _random_log(3)
    s = aipw_crossfit(log, ConstantRewardModel(0.0), seed=1)
    np.testing.assert_array_equal(s.scores, scores_ipw(log).scores)
    r = RidgeRewardModel(lam=0.5)
    assert np.array_equal(aipw_crossfit(log, r, 5).scores, aipw_crossfit(log, r, 5).scores)
    with pytest.raises(ValueError):
        aipw_crossfit(log.subset([0, 1, 2]), r)


def test_crossfit_uses_other_fold_only():
    log = _random_log(4)
    a, b = crossfit_folds(40, 9)
    s = aipw_crossfit(log, RidgeRewardModel(lam=0.5), seed=9)
    part = log.subset(a)
    m = RidgeRewardModel(lam=0.5, n_actions=3).fit(part.covariates, part.rewards, part.actions)
    np.testing.assert_allclose(s.scores[b], scores_aipw(log.subset(b), m).scores, atol=1e-12)


def test_empirical_variance_cases():
    rep = empirical_variance(np.ones((2, 1)), np.array([[0.0], [2.0]]))
    assert rep.empirical_variance == 2.0 and rep.standard_error == 1.0
    assert empirical_variance(np.ones((3, 1)), np.full((3, 1), 4.0)).empirical_variance == 0.0
    with pytest.raises(ValueError):
        empirical_variance(np.ones((1, 1)), np.ones((1, 1)))


def test_empirical_variance_two_pass_oracle():
    rng = np.random.default_rng(8)
    pi = rng.dirichlet(np.ones(4), size=100)
    g = rng.normal(size=(100, 4))
    z = [sum(pi[t, a] * g[t, a] for a in range(4)) for t in range(100)]
    mean = sum(z) / len(z)
    var = sum((v - mean) ** 2 for v in z) / (len(z) - 1)
    assert empirical_variance(pi, g).empirical_variance == pytest.approx(var, abs=1e-12)


def test_a2ipw_zero_model_constant_behavior_is_ipw():
    log = _random_log(5).with_behavior(np.tile([0.2, 0.3, 0.5], (40, 1)))
    pe = np.tile([0.1, 0.6, 0.3], (40, 1))
    est, _ = a2ipw_estimate(log, pe, reward_model=_Table(np.zeros((40, 3))))
    assert est == pytest.approx(inner_value(pe, scores_ipw(log)), abs=1e-12)


def test_a2ipw_single_round_is_ipw():
    log = _log([1], [3.0], [[0.25, 0.75]], X=np.array([[0.7]]))
    est, rep = a2ipw_estimate(log, [[0.5, 0.5]])
    assert est == pytest.approx(2.0)
    assert np.isnan(rep.standard_error)


def test_a2ipw_frozen_model_equals_aipw():
    log = _random_log(6)
    f = np.random.default_rng(1).normal(size=(40, 3))
    pe = np.tile([0.2, 0.2, 0.6], (40, 1))
    est, _ = a2ipw_estimate(log, pe, reward_model=_Table(f))
    assert est == inner_value(pe, scores_aipw(log, _Table(f)))


def test_a2ipw_uses_only_past_rounds():
    log = _random_log(7, n=30)
    pe = np.full((30, 3), 1 / 3)
    base, _ = a2ipw_estimate(log, pe)
    # changing the last reward only moves the last score
    changed = log.with_rewards(np.concatenate([log.rewards[:-1], [log.rewards[-1] + 10]]))
    est, _ = a2ipw_estimate(changed, pe)
    delta = 10 / log.chosen_props[-1] * pe[-1, log.actions[-1]] / 30
    assert est - base == pytest.approx(delta, abs=1e-9)


def test_ap_constant_updater_matches_a2ipw():
    log = _random_log(8)
    row = np.array([0.1, 0.5, 0.4])
    ap, rep = ap_estimate(log, lambda h, x: row)
    a2, _ = a2ipw_estimate(log, np.tile(row, (40, 1)))
    assert ap == pytest.approx(a2, abs=1e-12)
    assert rep.target == TARGET_AVERAGE
    uni, _ = ap_estimate(log, fixed_updater(UniformPolicyModel(3)))
    a2u, _ = a2ipw_estimate(log, np.full((40, 3), 1 / 3))
    assert uni == pytest.approx(a2u, abs=1e-12)


def test_ap_rejects_non_simplex_updater():
    with pytest.raises(ValueError):
        ap_estimate(_random_log(9), lambda h, x: np.array([0.5, 0.5, 0.5]))


def test_ap_updater_sees_only_history():
    seen = []
    log = _random_log(10, n=6)
    ap_estimate(log, lambda h, x: (seen.append(h.n_rounds), np.full(3, 1 / 3))[1])
    assert seen == list(range(6))


def test_itope_zero_model_is_ipw_and_single_record():
    hist, fut = _random_log(11), _random_log(12)
    pol = UniformPolicyModel(3)
    est, rep = itope_estimate(hist, fut, ConstantRewardModel(0.0), policy_fitter=lambda h: pol)
    assert est == pytest.approx(inner_value(np.full((40, 3), 1 / 3), scores_ipw(fut)), abs=1e-12)
    assert rep.target == TARGET_CONDITIONAL
    one = fut.subset([0])
    est1, _ = itope_estimate(hist, one, ConstantRewardModel(0.0), policy_fitter=lambda h: pol)
    assert est1 == pytest.approx(one.rewards[0] / one.chosen_props[0] / 3)
    with pytest.raises(ValueError):
        itope_estimate(hist.subset([]), fut, ConstantRewardModel(0.0))


def test_fit_rewarded_policy_fallback():
    log = _random_log(13).with_rewards(np.zeros(40))
    assert isinstance(fit_rewarded_policy(log), UniformPolicyModel)


def test_semiparametric_bound_cases():
    half = np.full((3, 2), 0.5)
    # two actions, each contributing 0.5**2 * 1 / 0.5
    assert semiparametric_bound(np.zeros((3, 2)), np.ones((3, 2)), half, half) == pytest.approx(1.0)
    assert semiparametric_bound(np.full((3, 2), 0.7), np.zeros((3, 2)), half, half) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        semiparametric_bound(np.zeros((1, 2)), np.ones((1, 2)), [[1.0, 0.0]], [[0.5, 0.5]])


def test_semiparametric_bound_brute_force():
    rng = np.random.default_rng(14)
    n, k = 25, 3
    f, nu = rng.random((n, k)), rng.random((n, k))
    pb, pe = rng.dirichlet(np.ones(k), n), rng.dirichlet(np.ones(k), n)
    theta = 0.4
    total = 0.0
    for t in range(n):
        s = 0.0
        for a in range(k):
            s += pe[t, a] ** 2 * nu[t, a] / pb[t, a]
        d = sum(pe[t, a] * f[t, a] for a in range(k)) - theta
        total += s + d * d
    assert semiparametric_bound(f, nu, pb, pe, theta) == pytest.approx(total / n, abs=1e-12)


def _eval_policy(X):
    z = np.column_stack([X[:, 0], X[:, 1], -X[:, 0]])
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def test_crossfit_unbiased_monte_carlo():
    spec = SyntheticSpec(seed=0)
    diffs = []
    for r in range(500):
        rng = replication_rng(21, r)
        full = gen_full_information(spec, 400, rng)
        log = make_bandit_feedback(full, np.full((400, 3), 1 / 3), rng)
        pe = _eval_policy(full.covariates)
        est, _ = estimate(pe, aipw_crossfit(log, RidgeRewardModel(1.0), seed=r))
        diffs.append(est - true_policy_value(full, pe))
    diffs = np.array(diffs)
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))


def test_aipw_with_true_model_reduces_variance():
    spec = SyntheticSpec(seed=0)
    wins = 0
    for r in range(200):
        rng = replication_rng(22, r)
        full = gen_full_information(spec, 2000, rng)
        log = make_bandit_feedback(full, np.full((2000, 3), 1 / 3), rng)
        pe = _eval_policy(full.covariates)
        v_aipw = empirical_variance(pe, scores_aipw(log, _Table(full.f_star))).empirical_variance
        v_ipw = empirical_variance(pe, scores_ipw(log)).empirical_variance
        wins += v_aipw <= v_ipw
    assert wins >= 190


def test_ap_unbiased_for_average_policy_value():
    spec = SyntheticSpec(seed=0)
    Xtruth = np.random.default_rng(99).standard_normal((20000, spec.dim))
    ftruth = spec.f_star(Xtruth)
    diffs = []
    for r in range(300):
        rng = replication_rng(23, r)
        full = gen_full_information(spec, 300, rng)
        log = make_bandit_feedback(full, np.full((300, 3), 1 / 3), rng)
        upd = RefittingUpdater([100, 200], 3, l2=0.1, max_iter=300)
        est, _ = ap_estimate(log, upd)
        starts = [s for s, _ in upd.segments] + [300]
        target = sum((starts[i + 1] - starts[i])
                     * np.einsum("tk,tk->t", m.predict_proba(Xtruth), ftruth).mean()
                     for i, (_, m) in enumerate(upd.segments)) / 300
        diffs.append(est - target)
    diffs = np.array(diffs)
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))


def test_itope_unbiased_for_conditional_value():
    spec = SyntheticSpec(seed=0)
    diffs = []
    for r in range(500):
        rng = replication_rng(24, r)
        hist_full = gen_full_information(spec, 300, rng)
        fut_full = gen_full_information(spec, 300, rng)
        hist = make_bandit_feedback(hist_full, np.full((300, 3), 1 / 3), rng)
        fut = make_bandit_feedback(fut_full, np.full((300, 3), 1 / 3), rng)
        fitted = []
        est, _ = itope_estimate(hist, fut, RidgeRewardModel(1.0),
                                policy_fitter=lambda h: fitted.append(fit_rewarded_policy(h, 0.1, max_iter=300))
                                or fitted[-1])
        diffs.append(est - true_policy_value(fut_full, fitted[0].predict_proba(fut_full.covariates)))
    diffs = np.array(diffs)
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))


def test_truth_helper_consistent():
    spec = SyntheticSpec(seed=0)
    v = policy_value(spec, lambda X: np.full((len(X), 3), 1 / 3), n_samples=50000, seed=1)
    assert v == pytest.approx(1 / 3, abs=1e-9)
