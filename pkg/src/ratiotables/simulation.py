"""Seeded Monte Carlo studies of the table and survival estimators.

Each replicate draws from its own random stream,
``SeedSequence(entropy=seed, spawn_key=(replicate,))``, so results do not
depend on the order or the process in which replicates are run.

Scenarios are plain INI files::

    [scenario]
    name = table3-setting1
    family = binomial
    replicates = 2000
    seed = 1
    estimators = mh, wmh, cml, bp, oldbp

    [binomial]
    sizes = 16x4*20, 4x16*20
    base = p21
    intercept = 0.03
    slope = 0.001
    link = odds
    ratio = 2

The base probability of stratum ``j = 1..J`` is ``intercept + slope * j``
for the row named by ``base``; the other row follows from the common odds
ratio (``link = odds``) or probability ratio (``link = ratio``).
"""
from __future__ import annotations

import configparser
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .conditional import fit_conditional
from .errors import FitError, InvalidProbability, ParseError
from .odds import OddsWeight, OptimalOracle, fit_odds
from .ratio import fit_ratio
from .strata import StratifiedDataset
from .survival import (
    CensoringConvention,
    SurvivalData,
    TimeBasis,
    TimeGrid,
    build_panel,
    discretize,
    fit_survival_odds,
    fit_survival_ratio,
)

__all__ = [
    "BinomialDesign",
    "WeibullDesign",
    "ScenarioSpec",
    "SummaryRow",
    "MonteCarloSummary",
    "generate",
    "run",
    "load_scenario",
    "bundled_scenarios",
    "TABLE_ESTIMATORS",
    "SURVIVAL_ESTIMATORS",
]

TABLE_ESTIMATORS = ("mh", "wmh", "cml", "bp", "oldbp", "oracle")
SURVIVAL_ESTIMATORS = ("mh", "wmh", "cml", "bp", "oldbp")


@dataclass(frozen=True)
class BinomialDesign:
    """Independent binomial rows in ``J`` strata.

    Parameters
    ----------
    sizes : sequence of (N1, N2)
        One pair per stratum.
    base : {"p21", "p11"}
        Row whose probability is ``intercept + slope * j``.
    link : {"odds", "ratio"}
        Common odds ratio or common probability ratio between the rows.
    ratio : float
        Value of the common ratio (not its log).
    """

    sizes: Tuple[Tuple[int, int], ...]
    base: str = "p21"
    intercept: float = 0.03
    slope: float = 0.001
    link: str = "odds"
    ratio: float = 2.0

    def __post_init__(self):
        if self.base not in ("p11", "p21"):
            raise ValueError("base must be 'p11' or 'p21'")
        if self.link not in ("odds", "ratio"):
            raise ValueError("link must be 'odds' or 'ratio'")
        if not self.ratio > 0:
            raise ValueError("ratio must be positive")
        object.__setattr__(self, "sizes", tuple((int(a), int(b)) for a, b in self.sizes))
        if any(a < 1 or b < 1 for a, b in self.sizes):
            raise ValueError("row sizes must be positive")
        self.probabilities()

    @property
    def J(self) -> int:
        return len(self.sizes)

    def probabilities(self) -> Tuple[np.ndarray, np.ndarray]:
        """True ``(p11, p21)`` per stratum.

        Raises
        ------
        InvalidProbability
            If the base rule or the linkage leaves ``(0, 1)``.
        """
        j = np.arange(1, self.J + 1)
        b = self.intercept + self.slope * j
        r = self.ratio
        if self.base == "p21":
            p21 = b
            p11 = r * b / (1 + (r - 1) * b) if self.link == "odds" else r * b
        else:
            p11 = b
            p21 = b / (r - (r - 1) * b) if self.link == "odds" else b / r
        for name, p in (("p11", p11), ("p21", p21)):
            if np.any((p <= 0) | (p >= 1)):
                raise InvalidProbability(f"{name} outside (0, 1) in stratum {int(j[(p <= 0) | (p >= 1)][0])}")
        return p11, p21


@dataclass(frozen=True)
class WeibullDesign:
    """Two-sample Weibull event times with group-specific censoring.

    ``censoring`` holds one law per group: ``("beta", scale, a, b)`` for
    ``scale * Beta(a, b)`` or ``("uniform", low, high)``.  Observed times
    are discretized on a regular grid of width ``grid_step``; risk-set
    tables stop once a group has fewer than ``min_at_risk`` subjects.
    """

    n: int = 200
    group1_probability: float = 0.5
    shape: Tuple[float, float] = (2.0, 1.0)
    scale: Tuple[float, float] = (1.0, 1.0)
    censoring: Tuple[tuple, tuple] = (("beta", 4.0, 2.0, 2.0), ("uniform", 0.0, 4.0))
    grid_step: float = 0.01
    convention: str = "late"
    breakpoints: Tuple[float, ...] = (1.0,)
    min_at_risk: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0 < self.group1_probability < 1:
            raise InvalidProbability("group1_probability must lie in (0, 1)")
        for law in self.censoring:
            if law[0] not in ("beta", "uniform"):
                raise ValueError(f"unknown censoring law {law[0]!r}")
        CensoringConvention(self.convention)

    def max_time(self) -> float:
        out = 0.0
        for law in self.censoring:
            out = max(out, law[1] if law[0] == "beta" else law[2])
        return out


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    design: Union[BinomialDesign, WeibullDesign]
    replicates: int = 2000
    seed: int = 1
    estimators: Tuple[str, ...] = ("mh", "wmh", "cml", "bp", "oldbp")

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        allowed = TABLE_ESTIMATORS if isinstance(self.design, BinomialDesign) else SURVIVAL_ESTIMATORS
        bad = [e for e in self.estimators if e not in allowed]
        if bad:
            raise ValueError(f"unknown estimators {bad} for this design; choose from {allowed}")

    @property
    def family(self) -> str:
        return "binomial" if isinstance(self.design, BinomialDesign) else "weibull"


def _rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(replicate,)))


def _censoring(law, size, rng):
    if law[0] == "beta":
        return law[1] * rng.beta(law[2], law[3], size)
    return rng.uniform(law[1], law[2], size)


def generate(spec: ScenarioSpec, replicate: int):
    """Data of one replicate: a StratifiedDataset or discretized SurvivalData."""
    rng = _rng(spec.seed, replicate)
    d = spec.design
    if isinstance(d, BinomialDesign):
        p11, p21 = d.probabilities()
        sizes = np.array(d.sizes)
        n11 = rng.binomial(sizes[:, 0], p11)
        n21 = rng.binomial(sizes[:, 1], p21)
        return StratifiedDataset(np.column_stack([n11, sizes[:, 0] - n11, n21, sizes[:, 1] - n21]))
    group = np.where(rng.random(d.n) < d.group1_probability, 1, 2)
    u = rng.random(d.n)
    shape = np.where(group == 1, d.shape[0], d.shape[1])
    scale = np.where(group == 1, d.scale[0], d.scale[1])
    t = scale * (-np.log(u)) ** (1.0 / shape)
    c = np.where(group == 1, _censoring(d.censoring[0], d.n, rng), _censoring(d.censoring[1], d.n, rng))
    y = np.minimum(t, c)
    status = (t <= c).astype(int)
    grid = TimeGrid.regular(d.grid_step, d.max_time())
    return discretize(SurvivalData(y, status, group), grid, d.convention)


def _fit_tables(ds: StratifiedDataset, name: str, oracle: Optional[OptimalOracle]):
    if name in ("mh", "wmh"):
        f = fit_odds(ds, OddsWeight.MANTEL_HAENSZEL if name == "mh" else OddsWeight.WEIGHTED)
        return f.estimate, f.cov_model_based, f.cov_model_robust
    if name == "oracle":
        f = fit_odds(ds, oracle)
        return f.estimate, f.cov_model_based, f.cov_model_robust
    if name == "cml":
        f = fit_conditional(ds)
        return f.estimate, f.cov_model_based, None
    f = fit_ratio(ds)
    if name == "oldbp":
        return f.estimate, f.extras["cov_legacy"], None
    return f.estimate, f.cov_model_based, f.cov_model_robust


def _replicate(spec: ScenarioSpec, replicate: int) -> Dict[str, tuple]:
    data = generate(spec, replicate)
    out = {}
    if isinstance(spec.design, BinomialDesign):
        oracle = OptimalOracle(*spec.design.probabilities()) if "oracle" in spec.estimators else None
        for name in spec.estimators:
            try:
                out[name] = _fit_tables(data, name, oracle)
            except FitError as exc:
                out[name] = exc
        return out
    try:
        panel = build_panel(data, TimeBasis(spec.design.breakpoints), min_at_risk=spec.design.min_at_risk)
    except FitError as exc:
        return {name: exc for name in spec.estimators}
    bp = None
    for name in spec.estimators:
        try:
            if name in ("mh", "wmh"):
                f = fit_survival_odds(panel, name)
                out[name] = (f.estimate, f.cov_model_based, f.cov_model_robust)
            elif name == "cml":
                f = fit_conditional(panel.dataset)
                out[name] = (f.estimate, f.cov_model_based, None)
            else:
                bp = bp or fit_survival_ratio(panel)
                cov_b = bp.extras["cov_legacy"] if name == "oldbp" else bp.cov_model_based
                out[name] = (bp.estimate, cov_b, bp.cov_model_robust)
        except FitError as exc:
            out[name] = exc
    return out


def _run_chunk(args):
    spec, reps = args
    return [_replicate(spec, r) for r in reps]


@dataclass
class SummaryRow:
    estimator: str
    coefficient: int
    point: float
    sd: float
    bse: float
    rse: float
    n_ok: int
    failures: int


@dataclass
class MonteCarloSummary:
    """Per estimator and coefficient: Monte Carlo mean and SD of the
    estimates, root mean model-based and model-robust variances, and the
    number of failed replicates.

    ``estimates[name]`` is an ``(R, p)`` array with NaN rows for failures.
    """

    spec: ScenarioSpec
    rows: List[SummaryRow]
    estimates: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    failure_messages: Dict[str, List[str]] = field(repr=False, default_factory=dict)

    def row(self, estimator: str, coefficient: int = 0) -> SummaryRow:
        for r in self.rows:
            if r.estimator == estimator and r.coefficient == coefficient:
                return r
        raise KeyError((estimator, coefficient))


def _nan_sd(x):
    x = x[np.isfinite(x)]
    return float(np.std(x, ddof=1)) if x.size > 1 else float("nan")


def _root_mean(v):
    v = v[np.isfinite(v)]
    return float(np.sqrt(np.mean(v))) if v.size else float("nan")


def run(spec: ScenarioSpec, estimators: Optional[Sequence[str]] = None, workers: int = 1) -> MonteCarloSummary:
    """Fit every estimator on every replicate and summarize.

    Replicates where an estimator raises a fit error are excluded from that
    estimator's summary and counted in ``failures``.
    """
    if estimators is not None:
        spec = ScenarioSpec(spec.name, spec.design, spec.replicates, spec.seed, tuple(estimators))
    R = spec.replicates
    if workers > 1:
        chunks = [(spec, list(range(i, R, workers))) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        results = [None] * R
        for (_, reps), part in zip(chunks, parts):
            for r, res in zip(reps, part):
                results[r] = res
    else:
        results = [_replicate(spec, r) for r in range(R)]

    rows, estimates, messages = [], {}, {}
    for name in spec.estimators:
        ok = [res[name] for res in results if not isinstance(res[name], Exception)]
        messages[name] = [str(res[name]) for res in results if isinstance(res[name], Exception)]
        p = ok[0][0].size if ok else 1
        est = np.full((R, p), np.nan)
        bvar = np.full((R, p), np.nan)
        rvar = np.full((R, p), np.nan)
        for r, res in enumerate(results):
            item = res[name]
            if isinstance(item, Exception):
                continue
            est[r] = item[0]
            if item[1] is not None:
                bvar[r] = np.diag(item[1])
            if item[2] is not None:
                rvar[r] = np.diag(item[2])
        estimates[name] = est
        for k in range(p):
            good = np.isfinite(est[:, k])
            rows.append(
                SummaryRow(
                    estimator=name,
                    coefficient=k,
                    point=float(np.mean(est[good, k])) if good.any() else float("nan"),
                    sd=_nan_sd(est[:, k]),
                    bse=_root_mean(bvar[:, k]),
                    rse=_root_mean(rvar[:, k]),
                    n_ok=int(good.sum()),
                    failures=int(R - good.sum()),
                )
            )
    return MonteCarloSummary(spec, rows, estimates, messages)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _parse_sizes(text: str) -> List[Tuple[int, int]]:
    """``"16x4*20, 4x16*20"`` -> twenty (16, 4) followed by twenty (4, 16)."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        pair, _, count = item.partition("*")
        a, _, b = pair.partition("x")
        out.extend([(int(a), int(b))] * (int(count) if count else 1))
    return out


def _parse_law(text: str) -> tuple:
    parts = text.split()
    return (parts[0],) + tuple(float(v) for v in parts[1:])


def load_scenario(source: Union[str, Path], replicates: Optional[int] = None, seed: Optional[int] = None) -> ScenarioSpec:
    """Read a scenario INI file (a path, or the name of a bundled scenario).

    Raises
    ------
    ParseError
        On a missing section or key, or an unparsable value.
    """
    path = Path(source)
    cp = configparser.ConfigParser()
    if path.exists():
        text = path.read_text()
    else:
        name = str(source)
        try:
            text = resources.files("ratiotables").joinpath("scenarios", f"{name}.ini").read_text()
        except FileNotFoundError:
            raise ParseError(f"no scenario file or bundled scenario named {name!r}") from None
    try:
        cp.read_string(text)
        sc = cp["scenario"]
        family = sc.get("family", "binomial")
        if family == "binomial":
            b = cp["binomial"]
            design = BinomialDesign(
                sizes=tuple(_parse_sizes(b["sizes"])),
                base=b.get("base", "p21"),
                intercept=b.getfloat("intercept"),
                slope=b.getfloat("slope"),
                link=b.get("link", "odds"),
                ratio=b.getfloat("ratio", 2.0),
            )
        elif family == "weibull":
            w = cp["weibull"]
            design = WeibullDesign(
                n=w.getint("n", 200),
                group1_probability=w.getfloat("group1_probability", 0.5),
                shape=tuple(_floats(w.get("shape", "2 1"))),
                scale=tuple(_floats(w.get("scale", "1 1"))),
                censoring=(_parse_law(w.get("censoring1", "beta 4 2 2")), _parse_law(w.get("censoring2", "uniform 0 4"))),
                grid_step=w.getfloat("grid_step"),
                convention=w.get("convention", "late"),
                breakpoints=tuple(_floats(w.get("breakpoints", "1"))),
                min_at_risk=w.getint("min_at_risk", 1),
            )
        else:
            raise ParseError(f"unknown family {family!r}")
        return ScenarioSpec(
            name=sc.get("name", path.stem),
            design=design,
            replicates=replicates if replicates is not None else sc.getint("replicates", 2000),
            seed=seed if seed is not None else sc.getint("seed", 1),
            estimators=tuple(e.strip() for e in sc.get("estimators", "mh, wmh, cml, bp, oldbp").split(",") if e.strip()),
        )
    except ParseError:
        raise
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ParseError(f"invalid scenario: {exc}") from None


def bundled_scenarios() -> List[str]:
    folder = resources.files("ratiotables").joinpath("scenarios")
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".ini"))
