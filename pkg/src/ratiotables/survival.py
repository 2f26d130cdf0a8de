"""Two-sample discrete-time survival data as a sequence of risk-set tables.

At each grid time ``t_j`` the subjects still at risk (``Y >= t_j``) form a
2x2 table: rows are the two groups, columns are event at ``t_j`` versus no
event.  The table-level estimators of :mod:`ratiotables.odds` and
:mod:`ratiotables.ratio` then apply unchanged, with covariates ``x(t_j)``
allowing the ratio to vary over time.  Because the tables share subjects,
model-robust variances are built from per-subject influence terms summed
over time rather than from independent per-table components.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyGroup, NegativeTime
from .odds import OddsVariance, OddsWeight, cov_odds, fit_odds
from .ratio import RatioVariance, cov_ratio, fit_ratio, ratio_information
from .solver import SolverConfig, safe_exp, sandwich
from .strata import FitResult, StratifiedDataset

__all__ = [
    "TimeGrid",
    "CensoringConvention",
    "SurvivalData",
    "discretize",
    "TimeBasis",
    "RiskSetPanel",
    "build_panel",
    "influence_h",
    "influence_h_lw",
    "influence_g",
    "SurvivalVariance",
    "cov_survival",
    "fit_survival_ratio",
    "fit_survival_odds",
    "km_curve",
]


class TimeGrid:
    """Strictly increasing grid ``0 = t0 < t1 < ... < tJ``."""

    def __init__(self, points):
        points = np.asarray(points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ValueError("a grid needs at least t0 = 0 and t1")
        if points[0] != 0.0:
            raise ValueError("grids start at 0")
        if not np.all(np.isfinite(points)) or np.any(np.diff(points) <= 0):
            raise ValueError("grid points must be finite and strictly increasing")
        self.points = points
        self.points.setflags(write=False)

    @classmethod
    def regular(cls, step: float, upper: float) -> "TimeGrid":
        """Grid ``0, step, 2 step, ...`` reaching at least ``upper``."""
        if not step > 0:
            raise ValueError("grid step must be positive")
        k = max(1, int(np.ceil(upper / step - 1e-9)))
        return cls(np.arange(k + 1) * step)

    @property
    def J(self) -> int:
        return self.points.size - 1

    def __repr__(self):
        return f"TimeGrid(J={self.J}, tJ={self.points[-1]:g})"


class CensoringConvention(str, Enum):
    """Placement of a censoring time that falls strictly inside a grid interval.

    ``EARLY`` moves it to the left end (the subject leaves the risk set
    before the next grid time); ``LATE`` moves it to the right end (the
    subject stays in the risk set of the next grid time).
    """

    EARLY = "early"
    LATE = "late"


@dataclass(frozen=True)
class SurvivalData:
    """Observed times, event indicators (1 event, 0 censored) and groups (1 or 2)."""

    time: np.ndarray
    status: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        d = np.asarray(self.status)
        g = np.asarray(self.group)
        if not (t.shape == d.shape == g.shape) or t.ndim != 1:
            raise ValueError("time, status and group must be 1-d arrays of equal length")
        if np.any(~np.isfinite(t)):
            raise ValueError("times must be finite")
        if np.any(t < 0):
            raise NegativeTime(f"negative time {t[t < 0][0]:g}")
        if not np.all(np.isin(d, (0, 1))):
            raise ValueError("status must be 0 or 1")
        if not np.all(np.isin(g, (1, 2))):
            raise ValueError("group must be 1 or 2")
        if np.any((d == 1) & (t == 0)):
            raise ValueError("an event cannot occur at time 0")
        for name, a in (("time", t), ("status", d.astype(np.int64)), ("group", g.astype(np.int64))):
            a = np.array(a)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.time.size


def discretize(
    data: SurvivalData, grid: TimeGrid, convention=CensoringConvention.LATE, boundary: str = "keep"
) -> SurvivalData:
    """Move raw times onto ``grid``.

    An event in ``(t_{j-1}, t_j]`` is recorded at ``t_j``.  A censoring in
    ``[t_{j-1}, t_j)`` is recorded at ``t_{j-1}`` (early) or ``t_j`` (late);
    a censoring exactly at a grid time stays there unless
    ``boundary="advance"``, which applies the half-open interval rule
    literally under the late convention and moves a censoring at ``t_{j-1}``
    to ``t_j``.  Times beyond ``tJ`` are treated as censored at ``tJ``.
    """
    convention = CensoringConvention(convention)
    if boundary not in ("keep", "advance"):
        raise ValueError(f"boundary must be 'keep' or 'advance', got {boundary!r}")
    pts = grid.points
    t = data.time
    status = data.status.copy()
    beyond = t > pts[-1]
    status[beyond] = 0
    tt = np.minimum(t, pts[-1])
    idx = np.searchsorted(pts, tt, side="left")
    if convention is CensoringConvention.EARLY:
        early = np.searchsorted(pts, tt, side="right") - 1
        idx = np.where(status == 1, idx, early)
    elif boundary == "advance":
        late = np.minimum(np.searchsorted(pts, tt, side="right"), pts.size - 1)
        idx = np.where(status == 1, idx, late)
    return SurvivalData(pts[idx], status, data.group)


class TimeBasis:
    """Piecewise-constant covariate function ``x(t)``.

    With breakpoints ``b1 < ... < bK`` the time axis splits into
    ``(-inf, b1], (b1, b2], ..., (bK, inf)``.  By default
    ``x(t) = (1, 1{b1 < t <= b2}, ..., 1{t > bK})``; pass ``values`` of
    shape ``(K + 1, p)`` to give each interval its own vector.

    Examples
    --------
    >>> TimeBasis([1.0])(np.array([0.5, 1.0, 1.5]))
    array([[1., 0.],
           [1., 0.],
           [1., 1.]])
    """

    def __init__(self, breakpoints: Sequence[float] = (), values=None, names=None):
        b = np.asarray(breakpoints, dtype=float).reshape(-1)
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if values is None:
            values = np.zeros((b.size + 1, b.size + 1))
            values[:, 0] = 1.0
            values[np.arange(1, b.size + 1), np.arange(1, b.size + 1)] = 1.0
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] != b.size + 1:
            raise ValueError("one row of values per interval")
        self.breakpoints = b
        self.values = values
        if names is None:
            names = ["x0"] + [f"x{k}" for k in range(1, values.shape[1])]
        self.names = tuple(names)

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __call__(self, t):
        return self.values[np.searchsorted(self.breakpoints, np.asarray(t, dtype=float), side="left")]


@dataclass
class RiskSetPanel:
    """Risk-set tables of a two-sample survival dataset.

    ``dataset`` holds one stratum per retained time in ``times``.  The
    subject-level arrays are kept for influence-function variances.
    """

    dataset: StratifiedDataset
    times: np.ndarray
    data: SurvivalData
    diagnostics: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.dataset.J

    @property
    def n_subjects(self) -> int:
        return len(self.data)

    def indicators(self):
        """Subject-by-time indicator matrices ``(I1, I2, I11, I21)``.

        ``Iz[i, j] = 1{Y_i >= t_j, Z_i = z}`` and
        ``Iz1[i, j] = 1{Y_i = t_j, delta_i = 1, Z_i = z}``.
        """
        y = self.data.time[:, None]
        at_risk = y >= self.times[None, :]
        event = (y == self.times[None, :]) & (self.data.status[:, None] == 1)
        g1 = (self.data.group == 1)[:, None]
        return (
            (at_risk & g1).astype(float),
            (at_risk & ~g1).astype(float),
            (event & g1).astype(float),
            (event & ~g1).astype(float),
        )

    def summary(self) -> dict:
        ds = self.dataset
        return {
            "J": int(ds.J),
            "n_subjects": self.n_subjects,
            "events_group1": int(ds.n11.sum()),
            "events_group2": int(ds.n21.sum()),
            "times": self.times,
        }


def build_panel(
    data: SurvivalData,
    basis: Optional[TimeBasis] = None,
    at="events",
    grid: Optional[TimeGrid] = None,
    min_at_risk: int = 1,
) -> RiskSetPanel:
    """Risk-set tables at event times (default) or at every grid time.

    Parameters
    ----------
    data : SurvivalData
        Times already on a common grid (see :func:`discretize`) or raw
        continuous times.
    basis : TimeBasis, optional
        Covariate function; a constant by default.
    at : {"events", "grid"}
        ``"grid"`` builds a table at every ``t_j, j >= 1`` of ``grid``.
    min_at_risk : int
        The panel stops before the first time at which either group has
        fewer than this many subjects at risk (default 1: stop once a group
        is empty).  With 2, every table supports the finite-sample
        corrected variance components.

    Raises
    ------
    EmptyGroup
        If a group has no subjects, or no table has both groups at risk.
    """
    basis = basis or TimeBasis()
    g = data.group
    if not np.any(g == 1) or not np.any(g == 2):
        raise EmptyGroup("both groups need at least one subject")
    if at == "events":
        times = np.unique(data.time[data.status == 1])
    elif at == "grid":
        if grid is None:
            raise ValueError("at='grid' needs a grid")
        times = grid.points[1:].copy()
    else:
        raise ValueError(f"unknown table placement {at!r}")
    y = data.time
    order1 = np.sort(y[g == 1])
    order2 = np.sort(y[g == 2])
    N1 = order1.size - np.searchsorted(order1, times, side="left")
    N2 = order2.size - np.searchsorted(order2, times, side="left")
    if min_at_risk < 1:
        raise ValueError("min_at_risk must be at least 1")
    keep = (N1 >= min_at_risk) & (N2 >= min_at_risk)
    diagnostics = {"warnings": []}
    if not np.all(keep):
        cut = int(np.argmin(keep))
        diagnostics["truncated_at"] = float(times[cut])
        diagnostics["warnings"].append(
            f"fewer than {min_at_risk} at risk in one group from t={times[cut]:g}; "
            f"{times.size - cut} later tables dropped"
        )
        times, N1, N2 = times[:cut], N1[:cut], N2[:cut]
    if times.size == 0:
        raise EmptyGroup(f"no time with at least {min_at_risk} at risk in both groups")
    ev = data.status == 1
    ev1 = np.sort(y[ev & (g == 1)])
    ev2 = np.sort(y[ev & (g == 2)])
    n11 = np.searchsorted(ev1, times, side="right") - np.searchsorted(ev1, times, side="left")
    n21 = np.searchsorted(ev2, times, side="right") - np.searchsorted(ev2, times, side="left")
    counts = np.column_stack([n11, N1 - n11, n21, N2 - n21])
    ds = StratifiedDataset(counts, basis(times), names=basis.names, stratum_ids=[float(t) for t in times])
    return RiskSetPanel(ds, times, data, diagnostics)


def influence_h(panel: RiskSetPanel, gamma, third_term=True) -> np.ndarray:
    """Per-subject linearization of each term of the Breslow-Peto score.

    Returns an ``(n_subjects, J)`` matrix whose column sums equal the
    per-table score terms at ``gamma``.  ``third_term=False`` drops the
    term that vanishes when the probability-ratio model holds.
    """
    ds = panel.dataset
    phi, _ = safe_exp(ds.design @ np.atleast_1d(gamma))
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    p11, _, p21, _ = ds.phat()
    I1, I2, I11, I21 = panel.indicators()
    den = N1 * phi + N2
    h = N2 / den * (I11 - p11 * I1) - N1 * phi / den * (I21 - p21 * I2)
    if third_term:
        h = h + (p11 - phi * p21) / den**2 * (N2**2 * I1 + phi * N1**2 * I2)
    return h


def influence_h_lw(panel: RiskSetPanel, gamma) -> np.ndarray:
    """Lin-Wei form of the Breslow-Peto influence terms, ``(n_subjects, J)``."""
    ds = panel.dataset
    phi, _ = safe_exp(ds.design @ np.atleast_1d(gamma))
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    s = ds.successes.astype(float)
    I1, I2, I11, I21 = panel.indicators()
    den = N1 * phi + N2
    pi = N1 * phi / den
    at_risk = I1 + I2
    event = I11 + I21
    centred = np.where(panel.data.group[:, None] == 1, 1.0 - pi, -pi)
    rate = s / den * np.where(panel.data.group[:, None] == 1, phi, 1.0)
    return event * centred - at_risk * rate * centred


def influence_g(panel: RiskSetPanel, beta, weight=OddsWeight.WEIGHTED, third_term=True) -> np.ndarray:
    """Per-subject linearization of each term of an odds-ratio estimating function.

    For ``WEIGHTED`` the table weight is ``N1 N2 / (N1 psi + N2)``; for
    ``MANTEL_HAENSZEL`` it is ``N1 N2 / (N1 + N2)``, which replaces ``psi`` by
    1 in the weight denominator.  Column sums equal the per-table terms of
    the estimating function.
    """
    weight = OddsWeight(weight)
    ds = panel.dataset
    psi, _ = safe_exp(ds.design @ np.atleast_1d(beta))
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    p11, p12, p21, p22 = ds.phat()
    I1, I2, I11, I21 = panel.indicators()
    c = psi if weight is OddsWeight.WEIGHTED else np.ones_like(psi)
    den = N1 * c + N2
    g = N2 * (p22 + psi * p21) / den * (I11 - p11 * I1) - N1 * (p11 + psi * p12) / den * (I21 - p21 * I2)
    if third_term:
        g = g + (p11 * p22 - psi * p12 * p21) / den**2 * (N2**2 * I1 + c * N1**2 * I2)
    return g


class SurvivalVariance(str, Enum):
    RATIO_ROBUST = "ratio-robust"
    RATIO_MODEL_BASED = "ratio-model"
    RATIO_MODEL_CORRECT = "ratio-model-correct"
    ODDS_ROBUST = "odds-robust"
    ODDS_MODEL_BASED = "odds-model"
    ODDS_MODEL_CORRECT = "odds-model-correct"
    LEGACY = "legacy"


def _subject_sandwich(bread, infl, X):
    u = infl @ X
    return sandwich(bread, u.T @ u)


def _odds_bread(ds: StratifiedDataset, beta, weight):
    psi, _ = safe_exp(ds.design @ np.atleast_1d(beta))
    p11, p12, p21, p22 = ds.phat()
    A, B = p11 * p22, p12 * p21
    N1, N2 = ds.N1.astype(float), ds.N2.astype(float)
    if weight is OddsWeight.WEIGHTED:
        w = (N1 * A + N2 * B) * N1 * N2 * psi / (N1 * psi + N2) ** 2
    else:
        w = N1 * N2 / (N1 + N2) * psi * B
    return ds.design.T @ (w[:, None] * ds.design)


def cov_survival(panel: RiskSetPanel, estimate, kind, weight=OddsWeight.WEIGHTED) -> np.ndarray:
    """Covariance of a survival-panel estimate, on the scale of the estimate.

    Parameters
    ----------
    panel : RiskSetPanel
    estimate : array_like
        Breslow-Peto estimate for the ``RATIO_*`` and ``LEGACY`` kinds, an
        odds-ratio estimate (with matching ``weight``) for ``ODDS_*``.
    kind : SurvivalVariance
        ``*_ROBUST`` use subject-level influence terms; ``*_MODEL_CORRECT``
        drop the term that vanishes under the model; ``*_MODEL_BASED``
        are the table-level model-based sandwiches; ``LEGACY`` is the
        inverse pseudo-likelihood information.
    weight : OddsWeight
    """
    kind = SurvivalVariance(kind)
    weight = OddsWeight(weight)
    ds = panel.dataset
    X = ds.design
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    if kind is SurvivalVariance.LEGACY:
        return cov_ratio(ds, est, RatioVariance.LEGACY_INVERSE_HESSIAN)
    if kind is SurvivalVariance.RATIO_MODEL_BASED:
        return cov_ratio(ds, est, RatioVariance.MODEL_BASED)
    if kind is SurvivalVariance.ODDS_MODEL_BASED:
        return cov_odds(ds, est, weight, OddsVariance.MODEL_BASED_ROBINS)
    if kind in (SurvivalVariance.RATIO_ROBUST, SurvivalVariance.RATIO_MODEL_CORRECT):
        infl = influence_h(panel, est, third_term=kind is SurvivalVariance.RATIO_ROBUST)
        return _subject_sandwich(ratio_information(ds, est), infl, X)
    infl = influence_g(panel, est, weight, third_term=kind is SurvivalVariance.ODDS_ROBUST)
    return _subject_sandwich(_odds_bread(ds, est, weight), infl, X)


def _merge_panel_diagnostics(fit: FitResult, panel: RiskSetPanel):
    fit.diagnostics["warnings"] = list(panel.diagnostics.get("warnings", [])) + fit.diagnostics.get("warnings", [])
    if "truncated_at" in panel.diagnostics:
        fit.diagnostics["truncated_at"] = panel.diagnostics["truncated_at"]


def fit_survival_ratio(panel: RiskSetPanel, solver: SolverConfig = None) -> FitResult:
    """Breslow-Peto fit on a survival panel.

    ``cov_model_based`` is the new model-based sandwich, ``cov_model_robust``
    the subject-level influence sandwich; ``extras`` carries the legacy
    inverse information and the model-correct variant.
    """
    fit = fit_ratio(panel.dataset, solver)
    est = fit.estimate
    fit.cov_model_robust = cov_survival(panel, est, SurvivalVariance.RATIO_ROBUST)
    fit.diagnostics.pop("robust_unavailable", None)
    fit.extras["cov_model_correct"] = cov_survival(panel, est, SurvivalVariance.RATIO_MODEL_CORRECT)
    _merge_panel_diagnostics(fit, panel)
    return fit


def fit_survival_odds(panel: RiskSetPanel, weight=OddsWeight.WEIGHTED, solver: SolverConfig = None) -> FitResult:
    """Weighted or plain Mantel-Haenszel odds-ratio fit on a survival panel."""
    weight = OddsWeight(weight)
    fit = fit_odds(panel.dataset, weight, solver, robust=OddsVariance.ROBUST_SIMPLE)
    est = fit.estimate
    fit.cov_model_robust = cov_survival(panel, est, SurvivalVariance.ODDS_ROBUST, weight)
    fit.extras["cov_model_correct"] = cov_survival(panel, est, SurvivalVariance.ODDS_MODEL_CORRECT, weight)
    _merge_panel_diagnostics(fit, panel)
    return fit


def km_curve(data: SurvivalData) -> dict:
    """Kaplan-Meier step points per group.

    Returns
    -------
    dict
        ``{1: (times, survival), 2: (times, survival)}`` with ``times``
        starting at 0 (survival 1) followed by each distinct event time.
    """
    out = {}
    for z in (1, 2):
        y = data.time[data.group == z]
        d = data.status[data.group == z]
        ts = np.unique(y[d == 1])
        ys = np.sort(y)
        at_risk = ys.size - np.searchsorted(ys, ts, side="left")
        ev = np.sort(y[d == 1])
        deaths = np.searchsorted(ev, ts, side="right") - np.searchsorted(ev, ts, side="left")
        surv = np.cumprod(1.0 - deaths / at_risk)
        out[z] = (np.concatenate([[0.0], ts]), np.concatenate([[1.0], surv]))
    return out
