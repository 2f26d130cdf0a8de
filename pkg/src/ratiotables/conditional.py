"""Exact conditional likelihood for the odds-ratio model.

Given the margins ``(s, N1, N2)`` of a 2x2 table, ``n11`` follows the
noncentral hypergeometric distribution with weights
``C(N1, k) C(N2, s - k) psi**k`` on ``max(0, s - N2) <= k <= min(s, N1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import Separation
from .solver import SolverConfig, maximize_or_separate, safe_exp, sandwich
from .strata import FitResult, StratifiedDataset, validate_dataset

__all__ = ["HypergeometricMargin", "ncht_moments", "fit_conditional", "conditional_score"]


@dataclass(frozen=True)
class HypergeometricMargin:
    s: int
    N1: int
    N2: int

    def __post_init__(self):
        if min(self.s, self.N1, self.N2) < 0 or self.s > self.N1 + self.N2:
            raise ValueError(f"invalid margins s={self.s}, N1={self.N1}, N2={self.N2}")

    @property
    def support(self) -> np.ndarray:
        return np.arange(max(0, self.s - self.N2), min(self.s, self.N1) + 1)


def _log_choose(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def ncht_moments(m: HypergeometricMargin, psi: float):
    """Mean and variance of ``n11`` given the margins at odds ratio ``psi``.

    Returns
    -------
    mean, variance : float
    """
    if not psi > 0:
        raise ValueError("psi must be positive")
    k = m.support
    logw = _log_choose(m.N1, k) + _log_choose(m.N2, m.s - k) + k * np.log(psi)
    w = np.exp(logw - logsumexp(logw))
    mean = float(np.dot(k, w))
    var = float(np.dot((k - mean) ** 2, w))
    return mean, var


class _Support:
    """Padded per-stratum supports for vectorized moment evaluation."""

    def __init__(self, ds: StratifiedDataset):
        s = ds.successes
        lo = np.maximum(0, s - ds.N2)
        hi = np.minimum(s, ds.N1)
        K = int(np.max(hi - lo)) + 1
        k = lo[:, None] + np.arange(K)[None, :]
        valid = k <= hi[:, None]
        kk = np.where(valid, k, lo[:, None])
        base = _log_choose(ds.N1[:, None], kk) + _log_choose(ds.N2[:, None], s[:, None] - kk)
        self.k = kk.astype(float)
        self.base = np.where(valid, base, -np.inf)
        self.lo, self.hi = lo, hi

    def moments(self, eta):
        logw = self.base + self.k * eta[:, None]
        logw = logw - np.max(logw, axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        mean = np.sum(self.k * w, axis=1)
        var = np.sum((self.k - mean[:, None]) ** 2 * w, axis=1)
        return mean, np.maximum(var, 0.0)

    def log_normalizer(self, eta):
        return logsumexp(self.base + self.k * eta[:, None], axis=1)


def conditional_score(ds: StratifiedDataset, beta) -> np.ndarray:
    """``sum_j (n11_j - E[n11_j | margins]) x_j`` at ``beta``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    mean, _ = _Support(ds).moments(ds.design @ beta)
    return ds.design.T @ (ds.n11 - mean)


def fit_conditional(ds: StratifiedDataset, solver: SolverConfig = None) -> FitResult:
    """Maximum conditional likelihood estimate of the odds-ratio model.

    The conditional log likelihood is concave, so damped Newton from zero
    converges whenever a finite maximizer exists.  Only a model-based
    covariance (inverse conditional information) is reported.

    Raises
    ------
    Separation
        If no stratum is informative, or the informative strata are
        separated along some covariate direction (every ``n11`` at the end
        of its support that the direction favours).
    Divergent, RankDeficient
    """
    solver = solver or SolverConfig()
    checks = validate_dataset(ds)
    sup = _Support(ds)
    informative = sup.hi > sup.lo
    if not np.any(informative):
        raise Separation("no stratum has a non-degenerate conditional distribution")
    n11 = ds.n11[informative]
    if ds.p == 1:
        x = ds.design[informative, 0]
        up = np.where(x > 0, n11 == sup.hi[informative], n11 == sup.lo[informative]) | (x == 0)
        down = np.where(x > 0, n11 == sup.lo[informative], n11 == sup.hi[informative]) | (x == 0)
        if np.all(up) or np.all(down):
            raise Separation("every informative stratum lies at a support bound: estimate is infinite")
    X = ds.design
    n11_all = ds.n11.astype(float)

    def fun(beta):
        eta = X @ beta
        mean, var = sup.moments(eta)
        value = float(np.sum(n11_all * eta - sup.log_normalizer(eta)))
        return value, X.T @ (n11_all - mean), X.T @ (var[:, None] * X)

    at_hi, at_lo = ds.n11 == sup.hi, ds.n11 == sup.lo
    sign = np.select([~(sup.hi > sup.lo), at_hi, at_lo], [np.nan, 1.0, -1.0], 0.0)
    res = maximize_or_separate(fun, X, solver, sign)
    _, _, info = fun(res.x)
    cov = sandwich(info)
    _, clamped = safe_exp(X @ res.x)
    return FitResult(
        estimate=res.x,
        cov_model_based=cov,
        cov_model_robust=None,
        iterations=res.iterations,
        gradient_norm=res.gradient_norm,
        converged=res.converged,
        method="cml",
        names=ds.names,
        diagnostics={"warnings": list(checks.warnings), "exp_clamped": clamped},
    )
