"""Mantel-Haenszel type estimation of odds ratios in stratified 2x2 tables.

The odds-ratio model is ``log psi_j = x_j' beta``.  Estimates solve

    sum_j rho_j(beta) * (A_j - psi_j(beta) * B_j) * x_j = 0,

with ``A_j = p11 p22`` and ``B_j = p12 p21`` from the raw proportions.  The
weighted estimator uses ``rho_j = N1 N2 / (N1 psi_j + N2)``; it is the
maximizer of a concave objective and reproduces the conditional score in
every stratum with a single success.  The Mantel-Haenszel estimator uses
the constant weight ``N1 N2 / N``.

Covariances are sandwiches ``H^-1 G H^-1`` with ``G = sum rho^2 sigma_j x x'``
where ``sigma_j`` estimates ``var(A_j - psi_j B_j)``.  All matrices are
returned on the scale of the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .errors import NotApplicable, PreconditionViolated, Separation
from .solver import SolverConfig, maximize_or_separate, safe_exp, sandwich
from .strata import FitResult, StratifiedDataset, StratumTable, validate_dataset

__all__ = [
    "OddsWeight",
    "OptimalOracle",
    "OddsVariance",
    "rho_weight",
    "sigma_component",
    "fit_odds",
    "cov_odds",
    "odds_score",
    "odds_sampling_variance",
    "rho_dagger",
    "rho_ddagger",
    "optimal_weight_gap",
    "mh_variance_robins",
    "mh_variance_flanders",
    "symmetrize_mh_variance",
]


class OddsWeight(str, Enum):
    MANTEL_HAENSZEL = "mh"
    WEIGHTED = "wmh"


@dataclass(frozen=True)
class OptimalOracle:
    """Infeasible optimal weights built from the true success probabilities.

    Only usable in simulations, where ``p11`` and ``p21`` (one entry per
    stratum) are known.
    """

    p11: np.ndarray
    p21: np.ndarray

    def __post_init__(self):
        p11 = np.atleast_1d(np.asarray(self.p11, dtype=float))
        p21 = np.atleast_1d(np.asarray(self.p21, dtype=float))
        if p11.shape != p21.shape:
            raise ValueError("p11 and p21 must have the same shape")
        if np.any((p11 <= 0) | (p11 >= 1) | (p21 <= 0) | (p21 >= 1)):
            raise ValueError("oracle probabilities must lie in (0, 1)")
        object.__setattr__(self, "p11", p11)
        object.__setattr__(self, "p21", p21)


WeightKind = Union[OddsWeight, OptimalOracle]


class OddsVariance(str, Enum):
    ROBUST_CORRECTED = "robust"
    ROBUST_SIMPLE = "robust-simple"
    MODEL_BASED_ROBINS = "robins"
    MODEL_BASED_FLANDERS = "flanders"
    POOLED_NULL = "pooled-null"


def _as_weight(weight) -> WeightKind:
    if isinstance(weight, OptimalOracle):
        return weight
    return OddsWeight(weight)


def _rho(weight: WeightKind, N1, N2, psi):
    N1 = np.asarray(N1, dtype=float)
    N2 = np.asarray(N2, dtype=float)
    if isinstance(weight, OptimalOracle):
        p11, p21 = weight.p11, weight.p21
        return N1 * N2 / (N1 * (p11 + psi * (1 - p11)) + N2 * (psi * p21 + 1 - p21))
    if weight is OddsWeight.MANTEL_HAENSZEL:
        return N1 * N2 / (N1 + N2) * np.ones_like(np.asarray(psi, dtype=float))
    return N1 * N2 / (N1 * psi + N2)


def _sigma(kind: OddsVariance, n11, n12, n21, n22, psi):
    n11, n12, n21, n22 = (np.asarray(a, dtype=float) for a in (n11, n12, n21, n22))
    N1 = n11 + n12
    N2 = n21 + n22
    p11, p12, p21, p22 = n11 / N1, n12 / N1, n21 / N2, n22 / N2
    u = p22 + psi * p21
    v = p11 + psi * p12
    if kind is OddsVariance.ROBUST_CORRECTED:
        if np.any(N1 < 2) or np.any(N2 < 2):
            raise PreconditionViolated("corrected variance component needs N1 >= 2 and N2 >= 2")
        q1 = p11 * p12 / (N1 - 1)
        q2 = p21 * p22 / (N2 - 1)
        return q1 * u**2 + q2 * v**2 - (psi - 1) ** 2 * q1 * q2
    if kind is OddsVariance.ROBUST_SIMPLE:
        return p11 * p12 / N1 * u**2 + p21 * p22 / N2 * v**2
    if kind is OddsVariance.MODEL_BASED_ROBINS:
        return psi * p12 * p21 / N1 * u + p11 * p22 / N2 * v
    if kind is OddsVariance.MODEL_BASED_FLANDERS:
        return psi * p12 * p21 * (u / N1 + v / N2 + (1 - psi) / (N1 * N2))
    if kind is OddsVariance.POOLED_NULL:
        N = N1 + N2
        pooled = (n11 + n21) / N
        return pooled * (1 - pooled) * N / (N - 1) * (1 / N1 + 1 / N2)
    raise ValueError(f"unknown variance kind {kind!r}")


def rho_weight(kind, beta, x, table: StratumTable) -> float:
    """Weight of one stratum at ``beta`` (covariate vector ``x``)."""
    weight = _as_weight(kind)
    psi, _ = safe_exp(np.dot(np.atleast_1d(x), np.atleast_1d(beta)))
    return float(_rho(weight, table.N1, table.N2, psi))


def sigma_component(kind, table: StratumTable, psi: float) -> float:
    """Per-stratum estimate of ``var(p11 p22 - psi p12 p21)``.

    Raises
    ------
    PreconditionViolated
        For the corrected robust component when ``N1 < 2`` or ``N2 < 2``.
    """
    return float(_sigma(OddsVariance(kind), *table.counts, psi))


def odds_sampling_variance(N1, N2, p11, p21, psi):
    """Exact ``var(p11_hat p22_hat - psi p12_hat p21_hat)`` under binomial sampling."""
    p12, p22 = 1 - p11, 1 - p21
    a = p11 * p12 / N1
    b = p21 * p22 / N2
    return a * (p22 + psi * p21) ** 2 + b * (p11 + psi * p12) ** 2 + (psi - 1) ** 2 * a * b


def rho_dagger(table: StratumTable, true_p11, true_p21, beta, x):
    psi = float(np.exp(np.dot(np.atleast_1d(x), np.atleast_1d(beta))))
    var = odds_sampling_variance(table.N1, table.N2, true_p11, true_p21, psi)
    return psi * (1 - true_p11) * true_p21 / var


def rho_ddagger(table: StratumTable, true_p11, true_p21, beta, x):
    psi = float(np.exp(np.dot(np.atleast_1d(x), np.atleast_1d(beta))))
    oracle = OptimalOracle([true_p11], [true_p21])
    return float(_rho(oracle, table.N1, table.N2, psi)[0])


def optimal_weight_gap(table: StratumTable, true_p11, true_p21, beta, x) -> float:
    """Relative error ``rho_w / rho_ddagger - 1`` of the weighted choice, closed form."""
    psi = float(np.exp(np.dot(np.atleast_1d(x), np.atleast_1d(beta))))
    N1, N2 = table.N1, table.N2
    return (1 - psi) * (N1 * true_p11 - N2 * true_p21) / (N1 * psi + N2)


def _bread(weight: WeightKind, ds: StratifiedDataset, psi):
    p11, p12, p21, p22 = ds.phat()
    A, B = p11 * p22, p12 * p21
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    if weight is OddsWeight.WEIGHTED:
        w = (N1 * A + N2 * B) * N1 * N2 * psi / (N1 * psi + N2) ** 2
    else:
        w = _rho(weight, N1, N2, psi) * psi * B
    X = ds.design
    return X.T @ (w[:, None] * X)


def cov_odds(ds: StratifiedDataset, beta, weight=OddsWeight.WEIGHTED, variance=OddsVariance.ROBUST_CORRECTED):
    """Sandwich covariance of an odds-ratio estimate, on the scale of ``beta``.

    Parameters
    ----------
    ds : StratifiedDataset
    beta : array_like
        Estimate obtained with the same ``weight``.
    weight : OddsWeight or OptimalOracle
    variance : OddsVariance
        Per-stratum component used in the meat.  ``ROBUST_*`` give
        model-robust estimates, ``MODEL_BASED_*`` are valid only when the
        odds-ratio model holds.

    Returns
    -------
    ndarray, shape (p, p)
    """
    weight = _as_weight(weight)
    variance = OddsVariance(variance)
    if variance is OddsVariance.POOLED_NULL:
        raise NotApplicable("the pooled null component is only used by score tests at beta = 0")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    psi, _ = safe_exp(ds.design @ beta)
    rho = _rho(weight, ds.N1, ds.N2, psi)
    sigma = _sigma(variance, ds.n11, ds.n12, ds.n21, ds.n22, psi)
    X = ds.design
    meat = X.T @ ((rho**2 * sigma)[:, None] * X)
    return sandwich(_bread(weight, ds, psi), meat)


def odds_score(ds: StratifiedDataset, beta, weight=OddsWeight.WEIGHTED):
    """The estimating function ``sum_j rho_j (A_j - psi_j B_j) x_j``."""
    weight = _as_weight(weight)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    psi, _ = safe_exp(ds.design @ beta)
    p11, p12, p21, p22 = ds.phat()
    rho = _rho(weight, ds.N1, ds.N2, psi)
    return ds.design.T @ (rho * (p11 * p22 - psi * p12 * p21))


def _weighted_objective(ds: StratifiedDataset):
    X = ds.design
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    p11, p12, p21, p22 = ds.phat()
    A, B = p11 * p22, p12 * p21
    c = N1 * A + N2 * B
    logN1, logN2 = np.log(N1), np.log(N2)

    def fun(beta):
        eta = X @ beta
        psi, _ = safe_exp(eta)
        den = N1 * psi + N2
        value = float(np.sum(N1 * A * eta - c * np.logaddexp(logN1 + eta, logN2)))
        grad = X.T @ (N1 * N2 * (A - psi * B) / den)
        w = c * N1 * N2 * psi / den**2
        return value, grad, X.T @ (w[:, None] * X)

    return fun


def _mh_objective(ds: StratifiedDataset):
    X = ds.design
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    rho = N1 * N2 / (N1 + N2)
    p11, p12, p21, p22 = ds.phat()
    A, B = p11 * p22, p12 * p21

    def fun(beta):
        eta = X @ beta
        psi, _ = safe_exp(eta)
        value = float(np.sum(rho * (A * eta - B * psi)))
        grad = X.T @ (rho * (A - psi * B))
        return value, grad, X.T @ ((rho * psi * B)[:, None] * X)

    return fun


def _oracle_equation(ds: StratifiedDataset, oracle: OptimalOracle):
    if oracle.p11.shape != (ds.J,):
        raise ValueError("oracle probabilities need one entry per stratum")
    X = ds.design
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    p11, p12, p21, p22 = ds.phat()
    A, B = p11 * p22, p12 * p21
    t11, t21 = oracle.p11, oracle.p21

    def fun(beta):
        psi, _ = safe_exp(X @ beta)
        den = N1 * (t11 + psi * (1 - t11)) + N2 * (psi * t21 + 1 - t21)
        rho = N1 * N2 / den
        resid = A - psi * B
        grad = X.T @ (rho * resid)
        drho = -rho * psi * (N1 * (1 - t11) + N2 * t21) / den
        w = rho * psi * B - drho * resid
        return None, grad, X.T @ (w[:, None] * X)

    return fun


def _closed_form(ds: StratifiedDataset):
    """Root for a constant covariate when all weights are proportional."""
    p11, p12, p21, p22 = ds.phat()
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    rho = N1 * N2 / (N1 + N2)
    num = float(np.sum(rho * p11 * p22))
    den = float(np.sum(rho * p12 * p21))
    return np.array([np.log(num / den) / ds.design[0, 0]])


def fit_odds(
    ds: StratifiedDataset,
    weight=OddsWeight.WEIGHTED,
    solver: SolverConfig = None,
    robust=OddsVariance.ROBUST_CORRECTED,
    model_based=OddsVariance.MODEL_BASED_ROBINS,
) -> FitResult:
    """Fit the odds-ratio model ``log psi_j = x_j' beta``.

    Parameters
    ----------
    ds : StratifiedDataset
    weight : OddsWeight or OptimalOracle
        ``WEIGHTED`` (default) maximizes the concave weighted objective;
        ``MANTEL_HAENSZEL`` uses the constant weights (closed form for a
        constant covariate, otherwise the maximizer of the concave
        surrogate ``sum rho_j (A_j x_j'b - B_j psi_j(b))``).
    solver : SolverConfig, optional
    robust, model_based : OddsVariance
        Components for the two covariance matrices.  If the corrected
        robust component is unavailable (a row total below 2) the robust
        covariance is left as None and the reason recorded in diagnostics.

    Raises
    ------
    Separation
        If no stratum has ``A_j > 0`` or none has ``B_j > 0``, or more
        generally if the estimating equation has no finite root because the
        strata are separated along some covariate direction.
    Divergent, RankDeficient, SingularHessian
    """
    weight = _as_weight(weight)
    solver = solver or SolverConfig()
    checks = validate_dataset(ds)
    p11, p12, p21, p22 = ds.phat()
    if not np.any(p11 * p22 > 0) or not np.any(p12 * p21 > 0):
        raise Separation("all A_j = 0 or all B_j = 0: estimate is infinite")

    if isinstance(weight, OptimalOracle):
        fun = _oracle_equation(ds, weight)
    elif weight is OddsWeight.WEIGHTED:
        fun = _weighted_objective(ds)
    else:
        fun = _mh_objective(ds)

    proportional = ds.has_constant_covariate() and (
        weight is OddsWeight.MANTEL_HAENSZEL
        or (weight is OddsWeight.WEIGHTED and np.all(ds.N1 == ds.N1[0]) and np.all(ds.N2 == ds.N2[0]))
    )
    if proportional:
        beta = _closed_form(ds)
        _, grad, _ = fun(beta)
        iterations, gnorm, converged = 0, float(np.max(np.abs(grad))), True
    else:
        A, B = p11 * p22, p12 * p21
        if weight is OddsWeight.MANTEL_HAENSZEL:
            # the surrogate grows linearly on strata with B_j = 0
            sign = np.where(B > 0, -1.0, np.nan)
            res = maximize_or_separate(fun, ds.design, solver, sign, slope=ds.N1 * ds.N2 / ds.N * A)
        else:
            sign = np.select([(A > 0) & (B > 0), A > 0, B > 0], [0.0, 1.0, -1.0], np.nan)
            res = maximize_or_separate(fun, ds.design, solver, sign)
        beta, iterations, gnorm, converged = res.x, res.iterations, res.gradient_norm, res.converged

    _, clamped = safe_exp(ds.design @ beta)
    diagnostics = {"warnings": list(checks.warnings), "exp_clamped": clamped}
    cov_b = cov_odds(ds, beta, weight, model_based)
    try:
        cov_r = cov_odds(ds, beta, weight, robust)
    except PreconditionViolated as exc:
        cov_r = None
        diagnostics["robust_unavailable"] = str(exc)
    method = "oracle" if isinstance(weight, OptimalOracle) else weight.value
    return FitResult(
        estimate=beta,
        cov_model_based=cov_b,
        cov_model_robust=cov_r,
        iterations=iterations,
        gradient_norm=gnorm,
        converged=converged,
        method=method,
        names=ds.names,
        diagnostics=diagnostics,
    )


def _require_common_odds(ds: StratifiedDataset):
    if not (ds.p == 1 and np.all(ds.design == 1.0)):
        raise NotApplicable("defined only for a common odds ratio (all x_j = 1)")


def _mh_pieces(ds, beta):
    _require_common_odds(ds)
    if beta is None:
        beta = _closed_form(ds)
    psi = float(np.exp(np.atleast_1d(beta)[0]))
    p11, p12, p21, p22 = ds.phat()
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    N = N1 + N2
    rho = N1 * N2 / N
    A, B = p11 * p22, p12 * p21
    return psi, p11, p12, p21, p22, N1, N2, N, rho, A, B


def mh_variance_robins(ds: StratifiedDataset, beta=None, exchanged=False) -> np.ndarray:
    """Robins-Breslow-Greenland variance of the common-odds MH log estimate.

    With ``exchanged=True`` returns the form obtained by exchanging the
    response values.  Returns a 1x1 matrix.
    """
    psi, p11, p12, p21, p22, N1, N2, N, rho, A, B = _mh_pieces(ds, beta)
    if exchanged:
        terms = A * N2 / N * (p21 / psi + p22 / psi**2) + B * N1 / N * (p12 + p11 / psi)
    else:
        terms = B * N2 / N * (p22 / psi + p21) + A * N1 / N * (p11 / psi**2 + p12 / psi)
    return np.array([[np.sum(rho * terms) / np.sum(rho * B) ** 2]])


def mh_variance_flanders(ds: StratifiedDataset, beta=None, exchanged=False) -> np.ndarray:
    """Flanders variance of the common-odds MH log estimate (1x1 matrix)."""
    psi, p11, p12, p21, p22, N1, N2, N, rho, A, B = _mh_pieces(ds, beta)
    if exchanged:
        terms = A * (
            N2 / N * (p21 / psi + p22 / psi**2)
            + N1 / N * (p11 / psi**2 + p12 / psi)
            + (1 / psi - 1 / psi**2) / N
        )
    else:
        terms = B * (N2 / N * (p22 / psi + p21) + N1 / N * (p12 + p11 / psi) + (1 / psi - 1) / N)
    return np.array([[np.sum(rho * terms) / np.sum(rho * B) ** 2]])


def symmetrize_mh_variance(ds: StratifiedDataset, beta=None, flanders=False) -> np.ndarray:
    """Average of a model-based MH variance and its response-exchanged form.

    The result is invariant to exchanging the response values.  Only
    defined for a common odds ratio; raises NotApplicable otherwise.
    """
    fn = mh_variance_flanders if flanders else mh_variance_robins
    return (fn(ds, beta) + fn(ds, beta, exchanged=True)) / 2
