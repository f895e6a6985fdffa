"""Normal quantiles, efficient estimator combination, z-tests, sample sizes
and minimax experimental design.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimators import semiparametric_bound
from .game import compositions

COND_LIMIT = 1e12

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


class SingularCovarianceError(ValueError):
    """Covariance matrix is not positive definite or is too ill-conditioned."""


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _lower_quantile(q: float) -> float:
    """Inverse CDF for ``0 < q <= 0.5`` with one Halley refinement against erfc."""
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / (
            (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        )
    else:
        s = q - 0.5
        r = s * s
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF, accurate to about 1e-9 absolute.

    Exactly odd about 0.5: ``normal_quantile(q) == -normal_quantile(1 - q)``
    whenever ``1 - q`` is computed in floating point and ``q >= 1e-3``.
    """
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    if q > 0.5:
        return -_lower_quantile(1.0 - q)
    if q >= 1e-3:
        # route through 1 - q so that q and fl(1 - q) see the same tail mass
        return _lower_quantile(1.0 - (1.0 - q))
    return _lower_quantile(q)


def _check_covariance(Sigma) -> np.ndarray:
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    eig = np.linalg.eigvalsh(S)
    if eig[0] <= 0 or eig[-1] / eig[0] > COND_LIMIT:
        raise SingularCovarianceError(
            f"covariance is singular or ill-conditioned (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})"
        )
    return S


def efficient_weights(Sigma) -> np.ndarray:
    """``Sigma^-1 1 / (1^T Sigma^-1 1)``; the weights sum to one but may be negative."""
    S = _check_covariance(Sigma)
    v = np.linalg.solve(S, np.ones(S.shape[0]))
    return v / v.sum()


@dataclass(frozen=True)
class CombinedEstimate:
    estimate: float
    variance: float
    weights: np.ndarray


def efficient_combine(estimates, Sigma) -> CombinedEstimate:
    """Minimum-variance unbiased linear combination of correlated estimates."""
    x = np.asarray(estimates, dtype=float)
    S = _check_covariance(Sigma)
    if x.shape != (S.shape[0],):
        raise ValueError("estimates and covariance disagree in size")
    v = np.linalg.solve(S, np.ones(S.shape[0]))
    total = float(v.sum())
    w = v / total
    return CombinedEstimate(float(w @ x), 1.0 / total, w)


@dataclass(frozen=True)
class TestResult:
    z_statistic: float
    p_value: float
    reject_at: dict
    correction: str = "none"


def z_test_difference(est1: float, est2: float, var_diff: float,
                      alpha: Sequence[float] | float = (0.1, 0.05, 0.01),
                      bonferroni: Optional[int] = None) -> TestResult:
    """Two-sided z-test of equal policy values.

    ``bonferroni=m`` multiplies the p-value by ``m`` (capped at 1).
    """
    if not var_diff > 0:
        raise ValueError("variance of the difference must be positive")
    levels = (alpha,) if isinstance(alpha, (int, float)) else tuple(alpha)
    z = (est1 - est2) / math.sqrt(var_diff)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    label = "none"
    if bonferroni is not None:
        if bonferroni < 1:
            raise ValueError("bonferroni count must be >= 1")
        p = min(1.0, p * bonferroni)
        label = f"bonferroni({bonferroni})"
    return TestResult(z, p, {a: p <= a for a in levels}, label)


def sample_size(sigma2_max: float, delta: float, alpha: float = 0.05, beta: float = 0.8) -> int:
    """Rounds needed for a level-``alpha`` two-sided test with power ``beta``.

    ``T = ceil(sigma2 (z_{1-alpha/2} + z_beta)^2 / delta^2)``.
    """
    if not sigma2_max > 0:
        raise ValueError("sigma2_max must be positive")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 < alpha < 1 or not 0 < beta < 1:
        raise ValueError("alpha and beta must lie in (0, 1)")
    zsum = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(beta)
    return int(math.ceil(sigma2_max * zsum * zsum / (delta * delta)))


def project_floored_simplex(v: np.ndarray, floor: float) -> np.ndarray:
    """Euclidean projection onto ``{x : x >= floor, sum(x) = 1}``."""
    k = v.shape[0]
    mass = 1.0 - k * floor
    if mass < 0:
        raise ValueError("floor too large for the number of actions")
    y = v - floor
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - mass
    idx = np.arange(1, k + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0) + floor


@dataclass(frozen=True)
class DesignResult:
    behavior: np.ndarray
    bound: float
    uniform_bound: float
    grid_checked: bool


def _weighted_inverse(coef: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """``sum_a coef[i, a] / pts[j, a]`` as an ``(i, j)`` array, with ``0 / 0 = 0`` and ``c / 0 = inf``."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inv = 1.0 / pts
        terms = np.where(coef[:, None, :] == 0.0, 0.0, coef[:, None, :] * inv[None, :, :])
    return terms.sum(axis=2)


class _DesignObjective:
    """``max_i sum_a c[i, a] / b_a + k[i]`` for a context-free behavior ``b``."""

    def __init__(self, policies, f_star, nu_star):
        self.coef = np.array([np.mean(np.asarray(p) ** 2 * nu_star, axis=0) for p in policies])
        k = []
        for p in policies:
            direct = np.einsum("tk,tk->t", np.asarray(p, dtype=float), f_star)
            k.append(float(np.mean((direct - direct.mean()) ** 2)))
        self.offset = np.array(k)

    def values(self, b: np.ndarray) -> np.ndarray:
        return _weighted_inverse(self.coef, b[None, :])[:, 0] + self.offset

    def __call__(self, b: np.ndarray) -> float:
        return float(self.values(b).max())


def _grid_search(objective: _DesignObjective, k: int, floor: float, resolution: int):
    n = resolution - 1
    comps = compositions(n, k) / n
    pts = floor + (1.0 - k * floor) * comps
    vals = _weighted_inverse(objective.coef, pts).T + objective.offset
    worst = vals.max(axis=1)
    i = int(np.argmin(worst))
    return pts[i], float(worst[i])


def efficient_design(policies, f_star, nu_star, floor: float = 0.01, iterations: int = 2000,
                     grid_resolution: int = 200) -> DesignResult:
    """Context-free behavior vector minimizing the worst efficiency bound over ``policies``.

    Each policy is a ``(n, K)`` matrix evaluated on the covariate sample that
    ``f_star`` and ``nu_star`` describe. The objective is a maximum of convex
    functions of the behavior vector; projected subgradient descent with
    normalized steps ``1/sqrt(i)`` keeps the best iterate. For ``K <= 3`` a
    simplex grid is searched as well and the better point is returned.
    """
    policies = [np.asarray(p, dtype=float) for p in policies]
    if not policies:
        raise ValueError("efficient_design needs at least one evaluation policy")
    f = np.asarray(f_star, dtype=float)
    nu = np.asarray(nu_star, dtype=float)
    for p in policies:
        if p.shape != f.shape or nu.shape != f.shape:
            raise ValueError("policies, f_star and nu_star must share one shape")
    k = f.shape[1]
    objective = _DesignObjective(policies, f, nu)
    b = np.full(k, 1.0 / k)
    uniform = objective(b)
    best_b, best = b.copy(), uniform
    for it in range(1, iterations + 1):
        vals = objective.values(b)
        active = int(np.argmax(vals))
        grad = -objective.coef[active] / np.maximum(b * b, 1e-300)
        norm = np.linalg.norm(grad)
        if norm == 0.0 or not np.isfinite(norm):
            break
        b = project_floored_simplex(b - grad / (norm * math.sqrt(it)), floor)
        value = objective(b)
        if value < best:
            best_b, best = b.copy(), value
    checked = False
    if k <= 3:
        gb, gv = _grid_search(objective, k, floor, grid_resolution)
        checked = True
        if gv < best:
            best_b, best = gb, gv
    return DesignResult(best_b, best, uniform, checked)


def design_bound(behavior, policies, f_star, nu_star) -> float:
    """Worst-case efficiency bound of a context-free behavior vector."""
    b = np.asarray(behavior, dtype=float)
    f = np.asarray(f_star, dtype=float)
    nu = np.asarray(nu_star, dtype=float)
    pb = np.tile(b, (f.shape[0], 1))
    return max(semiparametric_bound(f, nu, pb, p) for p in policies)
