"""Breslow-Peto estimation under the probability-ratio model.

The model is ``log phi_j = x_j' gamma`` with ``phi_j = p11_j / p21_j``.
The estimate maximizes the concave pseudo log likelihood

    sum_j [ n11_j x_j' gamma - s_j log(N1_j phi_j + N2_j) ],

whose gradient is ``sum_j q_j (p11_j - phi_j p21_j) x_j`` with
``q_j = N1_j N2_j / (N1_j phi_j + N2_j)``.  In two-sample survival data with
one table per event time this is the partial likelihood with the Breslow-Peto
handling of ties.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

from .errors import NotApplicable, PreconditionViolated, Separation, ZeroVariance
from .solver import SolverConfig, maximize_or_separate, safe_exp, sandwich
from .strata import FitResult, StratifiedDataset, StratumTable, validate_dataset

__all__ = [
    "RatioVariance",
    "fit_ratio",
    "v_component",
    "cov_ratio",
    "ratio_score",
    "ratio_information",
    "logrank",
    "score_test",
    "ScoreTest",
    "wald_test",
    "q_weight",
    "q_dagger",
    "q_ddagger",
    "q_weight_gap",
]


class RatioVariance(str, Enum):
    ROBUST_CORRECTED = "robust"
    MODEL_BASED = "model"
    POOLED_NULL = "pooled-null"
    LEGACY_INVERSE_HESSIAN = "legacy"


def _v(kind: RatioVariance, n11, n12, n21, n22, phi):
    n11, n12, n21, n22 = (np.asarray(a, dtype=float) for a in (n11, n12, n21, n22))
    N1 = n11 + n12
    N2 = n21 + n22
    p11, p12, p21, p22 = n11 / N1, n12 / N1, n21 / N2, n22 / N2
    if kind is RatioVariance.ROBUST_CORRECTED:
        if np.any(N1 < 2) or np.any(N2 < 2):
            raise PreconditionViolated("corrected variance component needs N1 >= 2 and N2 >= 2")
        return p11 * p12 / (N1 - 1) + phi**2 * p21 * p22 / (N2 - 1)
    if kind is RatioVariance.MODEL_BASED:
        return phi * (p12 * p21 / N1 + p11 * p22 / N2)
    if kind is RatioVariance.POOLED_NULL:
        N = N1 + N2
        pooled = (n11 + n21) / N
        return pooled * (1 - pooled) * N / (N - 1) * (1 / N1 + 1 / N2)
    raise NotApplicable(f"{kind.value} has no per-stratum component")


def v_component(kind, table: StratumTable, phi: float) -> float:
    """Per-stratum estimate of ``var(p11_hat - phi p21_hat)``."""
    return float(_v(RatioVariance(kind), *table.counts, phi))


def _phi(ds, gamma):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    return safe_exp(ds.design @ gamma)[0]


def ratio_score(ds: StratifiedDataset, gamma, form="difference") -> np.ndarray:
    """Estimating function at ``gamma``.

    ``form="difference"`` evaluates ``(n11 N2 - phi n21 N1) / (N1 phi + N2)``
    per stratum; ``form="expected"`` evaluates ``n11 - s N1 phi / (N1 phi + N2)``.
    The two are algebraically equal.
    """
    phi = _phi(ds, gamma)
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    den = N1 * phi + N2
    if form == "difference":
        terms = (ds.n11 * N2 - phi * ds.n21 * N1) / den
    elif form == "expected":
        terms = ds.n11 - ds.successes * N1 * phi / den
    else:
        raise ValueError(f"unknown form {form!r}")
    return ds.design.T @ terms


def ratio_information(ds: StratifiedDataset, gamma) -> np.ndarray:
    """Negative Hessian of the pseudo log likelihood at ``gamma``."""
    phi = _phi(ds, gamma)
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    w = ds.successes * N1 * N2 * phi / (N1 * phi + N2) ** 2
    return ds.design.T @ (w[:, None] * ds.design)


def cov_ratio(ds: StratifiedDataset, gamma, kind=RatioVariance.ROBUST_CORRECTED) -> np.ndarray:
    """Covariance of the Breslow-Peto estimate on the scale of ``gamma``.

    ``LEGACY_INVERSE_HESSIAN`` is the inverse of the pseudo-likelihood
    information, the value usually reported by survival software.  The
    other kinds are sandwiches with that information as bread.
    """
    kind = RatioVariance(kind)
    if kind is RatioVariance.POOLED_NULL:
        raise NotApplicable("the pooled null component is only used by score tests at gamma = 0")
    info = ratio_information(ds, gamma)
    if kind is RatioVariance.LEGACY_INVERSE_HESSIAN:
        return sandwich(info)
    phi = _phi(ds, gamma)
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    q = N1 * N2 / (N1 * phi + N2)
    v = _v(kind, ds.n11, ds.n12, ds.n21, ds.n22, phi)
    meat = ds.design.T @ ((q**2 * v)[:, None] * ds.design)
    return sandwich(info, meat)


def _objective(ds: StratifiedDataset):
    X = ds.design
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    n11 = ds.n11.astype(float)
    s = ds.successes.astype(float)
    logN1, logN2 = np.log(N1), np.log(N2)

    def fun(gamma):
        eta = X @ gamma
        phi, _ = safe_exp(eta)
        den = N1 * phi + N2
        value = float(np.sum(n11 * eta - s * np.logaddexp(logN1 + eta, logN2)))
        grad = X.T @ (n11 - s * N1 * phi / den)
        w = s * N1 * N2 * phi / den**2
        return value, grad, X.T @ (w[:, None] * X)

    return fun


def fit_ratio(
    ds: StratifiedDataset,
    solver: SolverConfig = None,
    robust=RatioVariance.ROBUST_CORRECTED,
    model_based=RatioVariance.MODEL_BASED,
) -> FitResult:
    """Breslow-Peto estimate of ``gamma`` in ``log phi_j = x_j' gamma``.

    The legacy inverse-information covariance is stored in
    ``extras["cov_legacy"]`` for comparison.

    Raises
    ------
    Separation
        If there are no successes in one of the two groups, or the strata
        are separated along some covariate direction.
    Divergent, RankDeficient, SingularHessian
    """
    solver = solver or SolverConfig()
    checks = validate_dataset(ds)
    if ds.n11.sum() == 0 or ds.n21.sum() == 0:
        raise Separation("no successes in one group: estimate is infinite")
    n11, n21 = ds.n11, ds.n21
    sign = np.select([(n11 > 0) & (n21 > 0), n11 > 0, n21 > 0], [0.0, 1.0, -1.0], np.nan)
    res = maximize_or_separate(_objective(ds), ds.design, solver, sign)
    gamma = res.x
    _, clamped = safe_exp(ds.design @ gamma)
    diagnostics = {"warnings": list(checks.warnings), "exp_clamped": clamped}
    cov_b = cov_ratio(ds, gamma, model_based)
    try:
        cov_r = cov_ratio(ds, gamma, robust)
    except PreconditionViolated as exc:
        cov_r = None
        diagnostics["robust_unavailable"] = str(exc)
    return FitResult(
        estimate=gamma,
        cov_model_based=cov_b,
        cov_model_robust=cov_r,
        iterations=res.iterations,
        gradient_norm=res.gradient_norm,
        converged=res.converged,
        method="bp",
        names=ds.names,
        diagnostics=diagnostics,
        extras={"cov_legacy": cov_ratio(ds, gamma, RatioVariance.LEGACY_INVERSE_HESSIAN)},
    )


def logrank(ds: StratifiedDataset):
    """Stratified log-rank (Mantel-Haenszel) statistic for ``p11_j = p21_j``.

    Returns
    -------
    z : float
    numerator : float
        ``sum_j (n11_j N2_j - n21_j N1_j) / N_j`` (observed minus expected).
    variance : float

    Raises
    ------
    ZeroVariance
    """
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    N = N1 + N2
    s = ds.successes.astype(float)
    numerator = float(np.sum((ds.n11 * N2 - ds.n21 * N1) / N))
    keep = N > 1
    pooled = s[keep] / N[keep]
    variance = float(np.sum(N1[keep] * N2[keep] * pooled * (1 - pooled) / (N[keep] - 1)))
    if variance <= 0:
        raise ZeroVariance("log-rank variance is zero")
    return numerator / np.sqrt(variance), numerator, variance


@dataclass
class ScoreTest:
    statistic: float
    df: int
    pvalue: float
    score: np.ndarray
    variance: np.ndarray

    @property
    def z(self) -> float:
        """Signed root of the statistic (one covariate only)."""
        if self.df != 1:
            raise NotApplicable("z is defined for a single covariate")
        return float(np.sign(self.score[0]) * np.sqrt(self.statistic))


def score_test(ds: StratifiedDataset, kind=RatioVariance.POOLED_NULL) -> ScoreTest:
    """Score test of ``gamma = 0`` based on the Breslow-Peto estimating function.

    With the pooled null component and a constant covariate the signed
    statistic equals the log-rank ``z``.
    """
    kind = RatioVariance(kind)
    if kind is RatioVariance.LEGACY_INVERSE_HESSIAN:
        variance = ratio_information(ds, np.zeros(ds.p))
    else:
        N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
        q = N1 * N2 / (N1 + N2)
        v = _v(kind, ds.n11, ds.n12, ds.n21, ds.n22, 1.0)
        variance = ds.design.T @ ((q**2 * v)[:, None] * ds.design)
    score = ratio_score(ds, np.zeros(ds.p))
    try:
        stat = float(score @ np.linalg.solve(variance, score))
    except np.linalg.LinAlgError:
        raise ZeroVariance("score variance is singular") from None
    if not np.isfinite(stat):
        raise ZeroVariance("score variance is singular")
    return ScoreTest(stat, ds.p, float(stats.chi2.sf(stat, ds.p)), score, variance)


def wald_test(estimate, cov, contrast=None):
    """Wald ``z`` and two-sided p-value for ``c' gamma = 0``.

    ``contrast`` defaults to the first unit vector.
    """
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    c = np.zeros_like(estimate) if contrast is None else np.asarray(contrast, dtype=float)
    if contrast is None:
        c[0] = 1.0
    se = float(np.sqrt(c @ cov @ c))
    if se == 0:
        raise ZeroVariance("contrast has zero variance")
    z = float(c @ estimate) / se
    return z, float(2 * stats.norm.sf(abs(z)))


def _phi_at(gamma, x):
    return float(np.exp(np.dot(np.atleast_1d(x), np.atleast_1d(gamma))))


def q_weight(table: StratumTable, gamma, x) -> float:
    phi = _phi_at(gamma, x)
    return table.N1 * table.N2 / (table.N1 * phi + table.N2)


def q_dagger(table: StratumTable, true_p11, true_p21, gamma, x) -> float:
    """``phi p21 / var(p11_hat - phi p21_hat)`` with the true probabilities."""
    phi = _phi_at(gamma, x)
    var = true_p11 * (1 - true_p11) / table.N1 + phi**2 * true_p21 * (1 - true_p21) / table.N2
    return phi * true_p21 / var


def q_ddagger(table: StratumTable, true_p11, true_p21, gamma, x) -> float:
    phi = _phi_at(gamma, x)
    N1, N2 = table.N1, table.N2
    return N1 * N2 / (N1 * phi * (1 - true_p21) + N2 * (1 - true_p11))


def q_weight_gap(table: StratumTable, true_p11, true_p21, gamma, x) -> float:
    """Relative error ``q_w / q_ddagger - 1``, closed form."""
    phi = _phi_at(gamma, x)
    N1, N2 = table.N1, table.N2
    return -(N1 * phi * true_p21 + N2 * true_p11) / (N1 * phi + N2)
