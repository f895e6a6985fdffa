"""Reward models and policy learners.

All learners follow the scikit-learn estimator protocol (``get_params`` /
``set_params`` / ``fit``) so they can be cloned, grid-searched and passed
around as learner specs. Reward models are per-action: ``fit`` takes the
chosen actions alongside the covariates and rewards, and ``predict_all``
returns the ``(n, K)`` matrix ``f(a, x)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

MODEL_FORMAT_VERSION = 1
MAX_POLY2_INPUTS = 50


def _check_actions(actions, n: int, n_actions: Optional[int]) -> tuple[np.ndarray, int]:
    if actions is None:
        actions = np.zeros(n, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (n,):
        raise ValueError("actions must have one entry per row")
    k = int(actions.max()) + 1 if n_actions is None else int(n_actions)
    if n and (actions.min() < 0 or actions.max() >= k):
        raise ValueError(f"actions must lie in [0, {k - 1}]")
    return actions, k


class _RewardModel(BaseEstimator, RegressorMixin):
    def predict_all(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X, actions=None) -> np.ndarray:
        """Predicted reward of ``actions`` (default: action 0) at each row."""
        f = self.predict_all(X)
        if actions is None:
            return f[:, 0]
        return f[np.arange(f.shape[0]), np.asarray(actions, dtype=np.int64)]

    def score(self, X, y, actions=None) -> float:
        return -float(np.mean((self.predict(X, actions) - np.asarray(y, dtype=float)) ** 2))


class ConstantRewardModel(_RewardModel):
    """Predicts ``value`` for every action; ``value=0`` turns AIPW into IPW."""

    def __init__(self, value: float = 0.0, n_actions: Optional[int] = None):
        self.value = value
        self.n_actions = n_actions

    def fit(self, X, y=None, actions=None):
        X = check_array(X, ensure_min_samples=0)
        if actions is not None:
            _, self.n_actions_ = _check_actions(actions, X.shape[0], self.n_actions)
        else:
            self.n_actions_ = self.n_actions or 1
        return self

    def predict_all(self, X) -> np.ndarray:
        check_is_fitted(self, "n_actions_")
        X = check_array(X, ensure_min_samples=0)
        return np.full((X.shape[0], self.n_actions_), float(self.value))


class RidgeRewardModel(_RewardModel):
    """Per-action L2-regularized linear regression.

    Parameters
    ----------
    lam: float, default=1.0
        Ridge penalty on the slopes.

    penalize_intercept: bool, default=False
        Also shrink the intercept. This is the batch counterpart of
        :class:`OnlineRidge`, whose prior information matrix is ``lam * I``
        over ``[1, x]``.

    n_actions: int, default=None
        Number of actions; inferred from the largest action index if omitted.

    An action absent from the training actions falls back to a constant
    model at the global reward mean.
    """

    def __init__(self, lam: float = 1.0, penalize_intercept: bool = False,
                 n_actions: Optional[int] = None):
        self.lam = lam
        self.penalize_intercept = penalize_intercept
        self.n_actions = n_actions

    def fit(self, X, y, actions=None):
        X = check_array(X)
        y = np.asarray(y, dtype=float)
        actions, k = _check_actions(actions, X.shape[0], self.n_actions)
        n, d = X.shape
        coef = np.zeros((k, d))
        intercept = np.full(k, y.mean())
        fallback = np.ones(k, dtype=bool)
        penalty = np.full(d + 1, float(self.lam))
        if not self.penalize_intercept:
            penalty[0] = 0.0
        for a in range(k):
            mask = actions == a
            if not mask.any():
                continue
            Z = np.hstack([np.ones((mask.sum(), 1)), X[mask]])
            gram = Z.T @ Z + np.diag(penalty)
            w = np.linalg.lstsq(gram, Z.T @ y[mask], rcond=None)[0]
            intercept[a], coef[a] = w[0], w[1:]
            fallback[a] = False
        self.coef_, self.intercept_, self.fallback_ = coef, intercept, fallback
        self.n_actions_ = k
        return self

    def predict_all(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_samples=0)
        return X @ self.coef_.T + self.intercept_


class KernelRidgeRewardModel(_RewardModel):
    """Per-action RBF kernel ridge regression, ``alpha = (G + lam I)^-1 y``.

    The kernel is ``k(x, x') = exp(-gamma * ||x - x'||^2)``; there is no
    intercept. Absent actions fall back to the global reward mean.
    """

    def __init__(self, gamma: float = 0.1, lam: float = 0.1, n_actions: Optional[int] = None):
        self.gamma = gamma
        self.lam = lam
        self.n_actions = n_actions

    def fit(self, X, y, actions=None):
        X = check_array(X)
        y = np.asarray(y, dtype=float)
        actions, k = _check_actions(actions, X.shape[0], self.n_actions)
        self.support_: list[Optional[np.ndarray]] = []
        self.dual_coef_: list[Optional[np.ndarray]] = []
        self.global_mean_ = float(y.mean())
        for a in range(k):
            mask = actions == a
            if not mask.any():
                self.support_.append(None)
                self.dual_coef_.append(None)
                continue
            Xa = X[mask]
            gram = rbf_kernel(Xa, Xa, self.gamma)
            gram[np.diag_indices_from(gram)] += self.lam
            self.support_.append(Xa)
            self.dual_coef_.append(np.linalg.solve(gram, y[mask]))
        self.n_actions_ = k
        return self

    def predict_all(self, X) -> np.ndarray:
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, ensure_min_samples=0)
        out = np.full((X.shape[0], self.n_actions_), self.global_mean_)
        for a, (sv, alpha) in enumerate(zip(self.support_, self.dual_coef_)):
            if sv is not None:
                out[:, a] = rbf_kernel(X, sv, self.gamma) @ alpha
        return out


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def fit_ridge(X, actions, y, lam: float, n_actions: Optional[int] = None,
              penalize_intercept: bool = False) -> RidgeRewardModel:
    return RidgeRewardModel(lam, penalize_intercept, n_actions).fit(X, y, actions)


def fit_kernel_ridge(X, actions, y, gamma: float, lam: float,
                     n_actions: Optional[int] = None) -> KernelRidgeRewardModel:
    return KernelRidgeRewardModel(gamma, lam, n_actions).fit(X, y, actions)


class OnlineRidge:
    """Recursive least squares, one ridge state per action.

    Starts from the information matrix ``lam * I`` over ``[1, x]`` and zero
    weights, so every prediction is 0 before the first update. After any
    sequence of updates the weights equal the batch solution of
    ``RidgeRewardModel(lam, penalize_intercept=True)`` on the same samples.
    """

    def __init__(self, n_features: int, n_actions: int, lam: float = 1.0):
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.lam = lam
        self.n_features = n_features
        self.n_actions = n_actions
        dim = n_features + 1
        self.precision_inv = np.repeat(np.eye(dim)[None] / lam, n_actions, axis=0)
        self.weights = np.zeros((n_actions, dim))
        self.n_seen = np.zeros(n_actions, dtype=np.int64)

    def update(self, x, action: int, reward: float) -> "OnlineRidge":
        z = np.concatenate(([1.0], np.asarray(x, dtype=float).ravel()))
        P = self.precision_inv[action]
        Pz = P @ z
        gain = Pz / (1.0 + z @ Pz)
        self.weights[action] += gain * (reward - z @ self.weights[action])
        self.precision_inv[action] = P - np.outer(gain, Pz)
        self.n_seen[action] += 1
        return self

    def predict_all(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.weights[:, 1:].T + self.weights[:, 0]

    def predict_row(self, x) -> np.ndarray:
        return self.weights[:, 1:] @ np.asarray(x, dtype=float) + self.weights[:, 0]


def online_ridge_update(state: OnlineRidge, x, action: int, reward: float) -> OnlineRidge:
    return state.update(x, action, reward)


class FeatureMap:
    """Deterministic feature expansion used by :class:`LogisticPolicy`."""

    def __init__(self, kind: str = "linear", n_components: int = 200, gamma: float = 0.1,
                 random_state: int = 0):
        if kind not in ("linear", "poly2", "rbf"):
            raise ValueError(f"unknown feature map {kind!r}")
        self.kind = kind
        self.n_components = n_components
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, X) -> "FeatureMap":
        d = X.shape[1]
        if self.kind == "poly2":
            if d > MAX_POLY2_INPUTS:
                raise ValueError(f"poly2 feature map supports at most {MAX_POLY2_INPUTS} inputs, got {d}")
            self.pairs_ = np.array(list(combinations_with_replacement(range(d), 2)), dtype=np.int64)
        elif self.kind == "rbf":
            rng = np.random.default_rng(self.random_state)
            self.omega_ = rng.normal(scale=np.sqrt(2.0 * self.gamma), size=(d, self.n_components))
            self.phase_ = rng.uniform(0.0, 2.0 * np.pi, size=self.n_components)
        self.n_inputs_ = d
        return self

    def transform(self, X) -> np.ndarray:
        if X.shape[1] != self.n_inputs_:
            raise ValueError(f"expected {self.n_inputs_} features, got {X.shape[1]}")
        if self.kind == "linear":
            return X
        if self.kind == "poly2":
            return np.hstack([X, X[:, self.pairs_[:, 0]] * X[:, self.pairs_[:, 1]]])
        return np.sqrt(2.0 / self.n_components) * np.cos(X @ self.omega_ + self.phase_)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


class LogisticPolicy(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression over a fixed feature map.

    The softmax output is used as an evaluation (or behavior) probability.
    Weights maximize the mean log-likelihood minus ``l2 / 2 * ||W||^2``
    (intercepts unpenalized) by accelerated full-batch gradient ascent,
    stopping when the gradient norm drops below ``tol`` or after
    ``max_iter`` iterations.

    Parameters
    ----------
    feature_map: {"linear", "poly2", "rbf"}, default="linear"
        ``rbf`` uses ``n_components`` random Fourier features of width
        ``gamma`` drawn from ``random_state``.

    n_classes: int, default=None
        Number of output columns. Classes absent from the training labels
        receive probability 0.
    """

    def __init__(self, feature_map: str = "linear", l2: float = 0.01, gamma: float = 0.1,
                 n_components: int = 200, random_state: int = 0, n_classes: Optional[int] = None,
                 max_iter: int = 5000, tol: float = 1e-6):
        self.feature_map = feature_map
        self.l2 = l2
        self.gamma = gamma
        self.n_components = n_components
        self.random_state = random_state
        self.n_classes = n_classes
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=np.int64)
        k = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        present = np.unique(y)
        if present.size < 2:
            raise ValueError("fit_logistic_policy needs at least two classes in the labels")
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must lie in [0, {k - 1}]")
        self.feature_map_ = FeatureMap(self.feature_map, self.n_components, self.gamma,
                                       self.random_state).fit(X)
        phi = self.feature_map_.transform(X)
        onehot = (y[:, None] == present[None, :]).astype(float)
        self.coef_, self.intercept_, self.n_iter_, self.grad_norm_ = _fit_softmax(
            phi, onehot, self.l2, self.max_iter, self.tol
        )
        self.classes_ = np.arange(k)
        self.present_ = present
        self.n_classes_ = k
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_samples=0)
        probs = _softmax(self.feature_map_.transform(X) @ self.coef_ + self.intercept_)
        out = np.zeros((X.shape[0], self.n_classes_))
        out[:, self.present_] = probs
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def log_likelihood(self, X, y) -> float:
        p = self.predict_proba(X)[np.arange(len(y)), np.asarray(y, dtype=np.int64)]
        return float(np.mean(np.log(np.clip(p, 1e-300, None))))


def _fit_softmax(phi: np.ndarray, onehot: np.ndarray, l2: float, max_iter: int, tol: float):
    """Nesterov-accelerated gradient ascent with gradient-based restarts."""
    n, d = phi.shape
    k = onehot.shape[1]
    aug = np.hstack([phi, np.ones((n, 1))])
    # the softmax log-likelihood has curvature at most 1/2 along any direction
    smooth = 0.5 * np.linalg.eigvalsh(aug.T @ aug / n)[-1] + l2
    step = 1.0 / smooth
    penalty = np.full((d + 1, 1), l2)
    penalty[-1] = 0.0

    def grad(theta):
        resid = onehot - _softmax(aug @ theta)
        return aug.T @ resid / n - penalty * theta

    theta = np.zeros((d + 1, k))
    prev = theta.copy()
    momentum_t = 1.0
    g_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum_t**2))
        look = theta + ((momentum_t - 1.0) / t_next) * (theta - prev)
        g_look = grad(look)
        g_norm = float(np.linalg.norm(g_look))
        if g_norm <= tol:
            theta = look
            break
        new = look + step * g_look
        if np.sum(g_look * (new - theta)) < 0.0:
            # momentum points downhill: keep the step, reset the momentum
            t_next = 1.0
        prev, theta, momentum_t = theta, new, t_next
    else:
        g_norm = float(np.linalg.norm(grad(theta)))
    return theta[:-1], theta[-1], it, g_norm


def fit_logistic_policy(X, labels, feature_map: str = "linear", l2: float = 0.01,
                        **kwargs) -> LogisticPolicy:
    return LogisticPolicy(feature_map=feature_map, l2=l2, **kwargs).fit(X, labels)


@dataclass(frozen=True)
class CVGrid:
    lambdas: tuple[float, ...] = (0.01, 0.1, 1.0)
    gammas: tuple[float, ...] = (0.01, 0.1, 1.0)
    folds: int = 2

    def __post_init__(self) -> None:
        if not self.lambdas or not self.gammas:
            raise ValueError("CV grids must be nonempty")
        if self.folds < 2:
            raise ValueError("need at least two folds")

    def candidates(self, estimator: BaseEstimator) -> list[dict]:
        params = estimator.get_params()
        lam_key = "lam" if "lam" in params else "l2"
        uses_gamma = "gamma" in params and params.get("feature_map", "rbf") == "rbf"
        gammas = sorted(self.gammas) if uses_gamma else [None]
        out = []
        for lam in sorted(self.lambdas):
            for g in gammas:
                point = {lam_key: lam}
                if g is not None:
                    point["gamma"] = g
                out.append(point)
        return out


def cross_validate(estimator: BaseEstimator, X, y, actions=None, grid: CVGrid = CVGrid(),
                   seed: int = 0) -> dict:
    """Pick the grid point with the smallest mean held-out loss.

    Loss is squared error on the chosen action for reward models and log loss
    for :class:`LogisticPolicy`. Folds come from one seeded permutation.
    Ties go to the smallest lambda, then the smallest gamma.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = X.shape[0]
    if n < 2 * grid.folds:
        raise ValueError(f"cross-validation needs at least {2 * grid.folds} rows")
    folds = np.array_split(np.random.default_rng(seed).permutation(n), grid.folds)
    is_classifier = isinstance(estimator, ClassifierMixin)
    best, best_loss = None, np.inf
    for point in grid.candidates(estimator):
        losses = []
        for k, held in enumerate(folds):
            train = np.concatenate([f for j, f in enumerate(folds) if j != k])
            model = clone(estimator).set_params(**point)
            if is_classifier:
                model.fit(X[train], y[train])
                losses.append(-model.log_likelihood(X[held], y[held]))
            else:
                a = None if actions is None else np.asarray(actions)
                model.fit(X[train], y[train], None if a is None else a[train])
                pred = model.predict(X[held], None if a is None else a[held])
                losses.append(float(np.mean((pred - y[held]) ** 2)))
        loss = float(np.mean(losses))
        if loss < best_loss:
            best, best_loss = point, loss
    return dict(best)


_MODEL_CLASSES = {
    cls.__name__: cls
    for cls in (ConstantRewardModel, RidgeRewardModel, KernelRidgeRewardModel, LogisticPolicy)
}


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, FeatureMap):
        return {"__feature_map__": {k: _encode(v) for k, v in vars(value).items()}}
    if isinstance(value, list):
        return [_encode(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _decode(value):
    if isinstance(value, dict) and "__ndarray__" in value:
        return np.asarray(value["__ndarray__"], dtype=value["dtype"])
    if isinstance(value, dict) and "__feature_map__" in value:
        fm = FeatureMap.__new__(FeatureMap)
        fm.__dict__.update({k: _decode(v) for k, v in value["__feature_map__"].items()})
        return fm
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def model_to_json(model: BaseEstimator) -> str:
    """Serialize a fitted model as a versioned JSON record."""
    name = type(model).__name__
    if name not in _MODEL_CLASSES:
        raise TypeError(f"cannot serialize {name}")
    fitted = {k: _encode(v) for k, v in vars(model).items() if k.endswith("_")}
    record = {"format": "ope_lab.model", "version": MODEL_FORMAT_VERSION, "name": name,
              "params": model.get_params(), "fitted": fitted}
    return json.dumps(record, sort_keys=True)


def model_from_json(text: str) -> BaseEstimator:
    record = json.loads(text)
    if record.get("format") != "ope_lab.model":
        raise ValueError("not an ope_lab model record")
    if record.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model record version {record.get('version')}")
    model = _MODEL_CLASSES[record["name"]](**record["params"])
    for k, v in record["fitted"].items():
        setattr(model, k, _decode(v))
    return model
