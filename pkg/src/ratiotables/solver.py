"""Damped Newton iteration for concave objectives and estimating equations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .errors import Divergent, Separation, SingularHessian

# x'beta is clamped to this magnitude before exponentiation
EXP_CLAMP = 700.0
# a fitted |x'beta| above this triggers the separation check
EXTREME_ETA = 15.0


@dataclass(frozen=True)
class SolverConfig:
    gtol: float = 1e-10
    xtol: float = 1e-12
    max_iter: int = 100
    max_halvings: int = 40


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    gradient_norm: float
    converged: bool


def safe_exp(eta):
    """Exponentiate with clamping; returns ``(values, clamped_flag)``."""
    eta = np.asarray(eta, dtype=float)
    clipped = np.clip(eta, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(clipped), bool(np.any(clipped != eta))


Evaluator = Callable[[np.ndarray], Tuple[Optional[float], np.ndarray, np.ndarray]]


def newton_maximize(fun: Evaluator, x0, config: SolverConfig = SolverConfig()) -> NewtonResult:
    """Maximize a concave function by Newton steps with step halving.

    ``fun(x)`` returns ``(value, gradient, negative_hessian)``.  If ``value``
    is None the line search uses the gradient norm as merit function, which
    turns this into a damped Newton root finder for estimating equations
    whose Jacobian is ``-negative_hessian``.

    Convergence requires ``max|gradient| <= gtol`` and either a Newton step
    of norm ``<= xtol`` or a step that no longer reduces the gradient (the
    floating-point floor).

    Raises
    ------
    Divergent
        If the tolerance is not reached in ``max_iter`` iterations or the
        Newton system becomes singular.
    """
    x = np.array(x0, dtype=float)
    value, grad, neg_hess = fun(x)
    best_below = np.inf
    for it in range(config.max_iter + 1):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if not np.isfinite(gnorm):
            raise Divergent(f"non-finite gradient at iteration {it}")
        if gnorm == 0.0:
            return NewtonResult(x, it, gnorm, True)
        try:
            step = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            raise Divergent(f"singular Newton system at iteration {it}") from None
        if not np.all(np.isfinite(step)):
            raise Divergent(f"non-finite Newton step at iteration {it}")
        if gnorm <= config.gtol:
            if np.linalg.norm(step) <= config.xtol or gnorm >= best_below:
                return NewtonResult(x, it, gnorm, True)
            best_below = gnorm
        if it == config.max_iter:
            break
        t = 1.0
        for _ in range(config.max_halvings):
            x_new = x + t * step
            v_new, g_new, h_new = fun(x_new)
            if value is not None:
                ok = v_new is not None and np.isfinite(v_new) and v_new >= value - 1e-13 * (1.0 + abs(value))
            else:
                ok = np.all(np.isfinite(g_new)) and np.max(np.abs(g_new)) < gnorm
            if ok:
                break
            t *= 0.5
        x, value, grad, neg_hess = x_new, v_new, g_new, h_new
    raise Divergent(
        f"gradient norm {gnorm:.3g} above tolerance {config.gtol:g} after {config.max_iter} iterations"
    )


def sandwich(bread, meat=None):
    """``bread^-1 meat bread^-1``, symmetrized; ``bread^-1`` if ``meat`` is None.

    Raises
    ------
    SingularHessian
        If ``bread`` is not finite or is numerically singular.
    """
    bread = np.asarray(bread, dtype=float)
    if not np.all(np.isfinite(bread)) or np.linalg.cond(bread) > 1e14:
        raise SingularHessian("bread matrix is singular")
    inv = np.linalg.inv(bread)
    cov = inv if meat is None else inv @ meat @ inv
    return (cov + cov.T) / 2


def recession_direction(X, sign, slope=None, tol=1e-9):
    """Direction ``d`` along which a stratified concave objective never decreases.

    Each stratum's contribution is assumed to be bounded along ``d`` only if
    ``delta_j = x_j' d`` respects ``sign[j]``: ``+1`` allows ``delta_j >= 0``,
    ``-1`` allows ``delta_j <= 0``, ``0`` requires ``delta_j = 0`` and NaN
    leaves it free.  Without ``slope`` a direction exists when some
    constrained ``delta_j`` can be nonzero.  With ``slope`` the objective
    grows like ``t * slope @ (X d)`` and a direction exists when that rate
    can be made positive.

    Returns
    -------
    ndarray or None
        A direction scaled into ``[-1, 1]^p``, or None if there is none.
    """
    X = np.asarray(X, dtype=float)
    sign = np.asarray(sign, dtype=float)
    up, down, fixed = sign == 1, sign == -1, sign == 0
    if slope is None:
        c = X[up].sum(axis=0) - X[down].sum(axis=0)
        A_ub = np.vstack([-X[up], X[down]])
    else:
        c = np.asarray(slope, dtype=float) @ X
        A_ub = np.vstack([-X[up], X[down]])
    A_eq = X[fixed] if np.any(fixed) else None
    res = linprog(
        -c,
        A_ub=A_ub if A_ub.size else None,
        b_ub=np.zeros(A_ub.shape[0]) if A_ub.size else None,
        A_eq=A_eq,
        b_eq=np.zeros(A_eq.shape[0]) if A_eq is not None else None,
        bounds=[(-1, 1)] * X.shape[1],
        method="highs",
    )
    if res.status != 0:
        return None
    scale = max(1.0, float(np.abs(c).sum()), float(np.abs(X).max()))
    return res.x if -res.fun > tol * scale else None


def maximize_or_separate(fun: Evaluator, X, config: SolverConfig, sign, slope=None) -> NewtonResult:
    """:func:`newton_maximize` from zero, checking for an infinite maximizer.

    The linear-programming check runs only when Newton fails or the fitted
    linear predictor is extreme, so ordinary fits pay nothing for it.

    Raises
    ------
    Separation
        If a recession direction exists (see :func:`recession_direction`).
    Divergent
    """
    X = np.asarray(X, dtype=float)
    try:
        res = newton_maximize(fun, np.zeros(X.shape[1]), config)
    except Divergent:
        if recession_direction(X, sign, slope) is not None:
            raise Separation("the data are separated along a covariate direction: estimate is infinite") from None
        raise
    if np.max(np.abs(X @ res.x)) > EXTREME_ETA and recession_direction(X, sign, slope) is not None:
        raise Separation("the data are separated along a covariate direction: estimate is infinite")
    return res
