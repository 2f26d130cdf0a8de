import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import optimize

from ratiotables.conditional import fit_conditional
from ratiotables.errors import EmptyGroup, NegativeTime
from ratiotables.odds import fit_odds, odds_score
from ratiotables.ratio import cov_ratio, fit_ratio, logrank, ratio_score
from ratiotables.survival import (
    SurvivalData,
    SurvivalVariance,
    TimeBasis,
    TimeGrid,
    build_panel,
    cov_survival,
    discretize,
    fit_survival_odds,
    fit_survival_ratio,
    influence_g,
    influence_h,
    influence_h_lw,
    km_curve,
)

from conftest import random_survival


def one(time, status, group):
    return SurvivalData(np.array([time]), np.array([status]), np.array([group]))


def six_subjects():
    # group 1: event 1, event 2, censored 3; group 2: event 2, censored 2, event 4
    return SurvivalData(
        np.array([1.0, 2.0, 3.0, 2.0, 2.0, 4.0]),
        np.array([1, 1, 0, 1, 0, 1]),
        np.array([1, 1, 1, 2, 2, 2]),
    )


def loop_influence_h(data, times, counts, phi):
    """Direct per-subject evaluation of the three-term influence formula."""
    out = np.zeros((len(data.time), len(times)))
    for j, t in enumerate(times):
        n11, n12, n21, n22 = counts[j]
        N1, N2 = n11 + n12, n21 + n22
        p11, p21 = n11 / N1, n21 / N2
        D = N1 * phi[j] + N2
        for i, (y, d, z) in enumerate(zip(data.time, data.status, data.group)):
            I1 = float(y >= t and z == 1)
            I2 = float(y >= t and z == 2)
            I11 = float(y == t and d == 1 and z == 1)
            I21 = float(y == t and d == 1 and z == 2)
            out[i, j] = (
                N2 / D * (I11 - p11 * I1)
                - N1 * phi[j] / D * (I21 - p21 * I2)
                + (p11 - phi[j] * p21) / D**2 * (N2**2 * I1 + phi[j] * N1**2 * I2)
            )
    return out


def classical_logrank(data):
    """Textbook two-sample log-rank from raw records."""
    o_minus_e = v = 0.0
    for t in np.unique(data.time[data.status == 1]):
        at = data.time >= t
        n1 = np.sum(at & (data.group == 1))
        n = np.sum(at)
        d = np.sum((data.time == t) & (data.status == 1))
        d1 = np.sum((data.time == t) & (data.status == 1) & (data.group == 1))
        if n1 == 0 or n1 == n:
            continue
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            v += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return o_minus_e / np.sqrt(v)


# --- discretization ---------------------------------------------------------


@pytest.mark.parametrize("convention", ["early", "late"])
def test_event_moves_right(convention):
    out = discretize(one(0.35, 1, 1), TimeGrid.regular(0.2, 1.0), convention)
    assert out.time[0] == pytest.approx(0.4) and out.status[0] == 1


def test_censoring_conventions():
    grid = TimeGrid.regular(0.2, 1.0)
    assert discretize(one(0.35, 0, 1), grid, "early").time[0] == pytest.approx(0.2)
    assert discretize(one(0.35, 0, 1), grid, "late").time[0] == pytest.approx(0.4)
    for convention in ("early", "late"):
        out = discretize(one(0.4, 0, 1), TimeGrid([0, 0.2, 0.4, 0.6]), convention)
        assert (out.time[0], out.status[0]) == (0.4, 0)


def test_boundary_advance():
    grid = TimeGrid([0, 20, 40, 60])
    assert discretize(one(20.0, 0, 1), grid, "late", boundary="advance").time[0] == 40
    assert discretize(one(20.0, 1, 1), grid, "late", boundary="advance").time[0] == 20
    assert discretize(one(60.0, 0, 1), grid, "late", boundary="advance").time[0] == 60


def test_beyond_last_grid_point_is_censored():
    out = discretize(one(5.0, 1, 1), TimeGrid([0, 1, 2]))
    assert (out.time[0], out.status[0]) == (2.0, 0)


def test_invalid_records():
    with pytest.raises(NegativeTime):
        one(-1.0, 0, 1)
    with pytest.raises(ValueError):
        one(0.0, 1, 1)
    with pytest.raises(ValueError):
        one(1.0, 2, 1)
    with pytest.raises(ValueError):
        TimeGrid([0, 2, 1])


def test_late_risk_sets_contain_early(rng):
    grid = TimeGrid.regular(0.5, 5.0)
    for _ in range(20):
        raw = SurvivalData(rng.uniform(0.01, 5, 30), rng.integers(0, 2, 30), rng.integers(1, 3, 30))
        early = discretize(raw, grid, "early")
        late = discretize(raw, grid, "late")
        for t in grid.points[1:]:
            assert np.all((early.time >= t) <= (late.time >= t))


# --- panels -----------------------------------------------------------------


def test_two_subject_panel():
    panel = build_panel(SurvivalData(np.array([1.0, 1.0]), np.array([1, 0]), np.array([1, 2])))
    assert_array_equal(panel.dataset.counts, [[1, 0, 0, 1]])


def test_six_subject_hand_count():
    panel = build_panel(six_subjects())
    assert_array_equal(panel.times, [1.0, 2.0])
    assert_array_equal(panel.dataset.counts, [[1, 2, 0, 3], [1, 1, 1, 2]])
    assert panel.diagnostics["truncated_at"] == 4.0
    assert panel.summary()["events_group1"] == 2


def test_grid_placement_and_min_at_risk():
    data = six_subjects()
    panel = build_panel(data, at="grid", grid=TimeGrid([0, 1, 2, 3]))
    assert_array_equal(panel.dataset.counts, [[1, 2, 0, 3], [1, 1, 1, 2], [0, 1, 0, 1]])
    panel = build_panel(data, min_at_risk=3)
    assert_array_equal(panel.times, [1.0])
    panel = build_panel(data, at="grid", grid=TimeGrid([0, 1, 2, 3]), min_at_risk=2)
    assert_array_equal(panel.times, [1.0, 2.0])


def test_empty_group():
    with pytest.raises(EmptyGroup):
        build_panel(SurvivalData(np.array([1.0, 2.0]), np.array([1, 1]), np.array([1, 1])))
    with pytest.raises(EmptyGroup):
        build_panel(SurvivalData(np.array([1.0, 2.0]), np.array([0, 1]), np.array([1, 2])))


def test_no_ties_gives_single_successes(rng):
    panel = build_panel(random_survival(rng, ties=False))
    assert np.all(panel.dataset.successes == 1)


def test_risk_sets_monotone(rng):
    for _ in range(20):
        data = random_survival(rng)
        ds = build_panel(data).dataset
        assert np.all(np.diff(ds.N1) <= 0) and np.all(np.diff(ds.N2) <= 0)
        assert ds.n11.sum() <= np.sum(data.group == 1)


def test_time_basis():
    basis = TimeBasis([100, 200])
    assert_array_equal(basis([50, 100, 150, 200, 250]), [[1, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 0], [1, 0, 1]])
    assert basis.names == ("x0", "x1", "x2")
    with pytest.raises(ValueError):
        TimeBasis([2, 1])


# --- influence functions ----------------------------------------------------


def test_influence_matches_direct_loop(rng):
    for _ in range(5):
        data = random_survival(rng, n=15)
        panel = build_panel(data, TimeBasis([3.5]))
        gamma = rng.normal(size=2)
        phi = np.exp(panel.dataset.design @ gamma)
        expected = loop_influence_h(data, panel.times, panel.dataset.counts, phi)
        assert_allclose(influence_h(panel, gamma), expected, rtol=1e-13, atol=1e-15)


def test_lin_wei_form(rng):
    for _ in range(100):
        panel = build_panel(random_survival(rng), TimeBasis([3.5]))
        gamma = rng.normal(size=2)
        assert_allclose(influence_h(panel, gamma), influence_h_lw(panel, gamma), rtol=0, atol=1e-12)


def test_influence_sums_reproduce_scores(rng):
    for _ in range(20):
        panel = build_panel(random_survival(rng), TimeBasis([3.5]))
        X = panel.dataset.design
        b = rng.normal(scale=0.5, size=2)
        assert_allclose(influence_h(panel, b).sum(axis=0) @ X, ratio_score(panel.dataset, b), atol=1e-12)
        for w in ("wmh", "mh"):
            assert_allclose(influence_g(panel, b, w).sum(axis=0) @ X, odds_score(panel.dataset, b, w), atol=1e-12)


def test_not_at_risk_contributes_nothing():
    panel = build_panel(six_subjects())
    h = influence_h(panel, [0.3])
    g = influence_g(panel, [0.3])
    # subject 0 has Y = 1 < t = 2
    assert h[0, 1] == 0.0 and g[0, 1] == 0.0


def test_third_term_vanishes_under_model():
    # p11 = p21 = 1/2 in the only table, phi = 1
    data = SurvivalData(np.array([1.0, 2.0, 1.0, 2.0]), np.array([1, 0, 1, 0]), np.array([1, 1, 2, 2]))
    panel = build_panel(data)
    assert_array_equal(influence_h(panel, [0.0]), influence_h(panel, [0.0], third_term=False))


# --- fits and variances -----------------------------------------------------


def cox_exact_no_ties(data):
    order = np.argsort(data.time)
    z = (data.group[order] == 1).astype(float)
    d = data.status[order]

    def negll(b):
        eta = b * z
        tail = np.logaddexp.accumulate(eta[::-1])[::-1]
        return -np.sum(d * (eta - tail))

    return optimize.minimize_scalar(negll, bracket=(-1, 1), tol=1e-12).x


def test_no_ties_equivalences(rng):
    for _ in range(20):
        data = random_survival(rng, n=60, ties=False)
        panel = build_panel(data)
        fit = fit_survival_ratio(panel)
        assert_allclose(fit.estimate, fit_conditional(panel.dataset).estimate, atol=1e-8)
        assert_allclose(fit.estimate, [cox_exact_no_ties(data)], atol=1e-6)
        legacy = cov_survival(panel, fit.estimate, SurvivalVariance.LEGACY)
        assert_allclose(cov_survival(panel, fit.estimate, "ratio-model"), legacy, rtol=1e-12)


def test_legacy_dominates_model_based_on_panels(rng):
    for _ in range(50):
        panel = build_panel(random_survival(rng), TimeBasis([3.5]))
        gamma = rng.normal(scale=0.5, size=2)
        diff = cov_survival(panel, gamma, "legacy") - cov_survival(panel, gamma, "ratio-model")
        assert np.min(np.linalg.eigvalsh(diff)) >= -1e-10


def test_legacy_is_table_information():
    panel = build_panel(six_subjects())
    assert_allclose(cov_survival(panel, [0.2], "legacy"), cov_ratio(panel.dataset, [0.2], "legacy"), rtol=0)


def test_fit_survival_reports(rng):
    panel = build_panel(random_survival(rng, n=80), TimeBasis([3.5]))
    fit = fit_survival_ratio(panel)
    assert fit.cov_model_robust.shape == (2, 2)
    assert {"cov_legacy", "cov_model_correct"} <= set(fit.extras)
    for w in ("mh", "wmh"):
        ofit = fit_survival_odds(panel, w)
        assert_allclose(ofit.estimate, fit_odds(panel.dataset, w).estimate, rtol=0)
        assert ofit.cov_model_robust.shape == (2, 2)


def test_logrank_matches_textbook(rng):
    for _ in range(50):
        data = random_survival(rng)
        z, _, _ = logrank(build_panel(data).dataset)
        assert z == pytest.approx(classical_logrank(data), rel=1e-12)


def test_km_curve():
    km = km_curve(six_subjects())
    t1, s1 = km[1]
    assert_allclose(t1, [0, 1, 2])
    assert_allclose(s1, [1, 2 / 3, 1 / 3])
    t2, s2 = km[2]
    assert_allclose(t2, [0, 2, 4])
    assert_allclose(s2, [1, 2 / 3, 0])
