"""Estimation for stratified 2x2 tables and two-sample discrete-time survival data.

Odds-ratio models are fit by weighted or plain Mantel-Haenszel estimating
equations (:mod:`ratiotables.odds`) or by exact conditional likelihood
(:mod:`ratiotables.conditional`); probability-ratio models by the
Breslow-Peto estimator (:mod:`ratiotables.ratio`).  Survival data enter as
risk-set tables (:mod:`ratiotables.survival`).
"""

__version__ = "0.1.0"

from .conditional import HypergeometricMargin, fit_conditional, ncht_moments
from .errors import (
    Divergent,
    EmptyGroup,
    FitError,
    InvalidProbability,
    NegativeTime,
    NotApplicable,
    ParseError,
    PreconditionViolated,
    RankDeficient,
    RatioTablesError,
    Separation,
    SingularHessian,
    ZeroVariance,
)
from .odds import (
    OddsVariance,
    OddsWeight,
    OptimalOracle,
    cov_odds,
    fit_odds,
    optimal_weight_gap,
    rho_weight,
    sigma_component,
    symmetrize_mh_variance,
)
from .ratio import RatioVariance, cov_ratio, fit_ratio, logrank, score_test, v_component, wald_test
from .solver import SolverConfig
from .strata import FitResult, StratifiedDataset, StratumTable, proportions, validate_dataset
from .survival import (
    CensoringConvention,
    SurvivalData,
    SurvivalVariance,
    TimeBasis,
    TimeGrid,
    build_panel,
    cov_survival,
    discretize,
    fit_survival_odds,
    fit_survival_ratio,
    km_curve,
)
