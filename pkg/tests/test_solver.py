import numpy as np
import pytest

from ratiotables.conditional import fit_conditional
from ratiotables.errors import Separation
from ratiotables.odds import fit_odds
from ratiotables.ratio import fit_ratio
from ratiotables.solver import recession_direction
from ratiotables.strata import StratifiedDataset

from conftest import random_dataset

# the second covariate separates the strata: every table with x2 > 0 has
# no control successes, every table with x2 < 0 no test successes
SEPARATED = StratifiedDataset(
    np.array([[2, 1, 0, 3], [0, 3, 2, 1], [1, 1, 1, 1]]),
    np.array([[1.0, 1.0], [1.0, -1.0], [1.0, 0.0]]),
)


@pytest.mark.parametrize(
    "fit",
    [
        lambda ds: fit_odds(ds, "wmh"),
        lambda ds: fit_odds(ds, "mh"),
        fit_ratio,
        fit_conditional,
    ],
    ids=["wmh", "mh", "ratio", "conditional"],
)
def test_covariate_separation_is_reported(fit):
    with pytest.raises(Separation):
        fit(SEPARATED)


def test_direction_found_for_separated_signs():
    d = recession_direction(SEPARATED.design, [1.0, -1.0, 0.0])
    assert d is not None
    eta = SEPARATED.design @ d
    assert eta[0] > 0 and eta[1] < 0 and abs(eta[2]) < 1e-12


def test_no_direction_when_every_stratum_is_pinned():
    assert recession_direction(SEPARATED.design, [0.0, 0.0, 0.0]) is None


def test_free_strata_do_not_block_a_direction():
    assert recession_direction(SEPARATED.design, [1.0, np.nan, np.nan]) is not None


def test_linear_growth_mode():
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    # growth rate slope @ (X d) with X d <= 0 forced on the second stratum
    assert recession_direction(X, [np.nan, -1.0], slope=[1.0, 0.0]) is not None
    assert recession_direction(X, [-1.0, -1.0], slope=[1.0, 1.0]) is None


def test_ordinary_fits_unaffected(rng):
    for _ in range(30):
        ds = random_dataset(rng, p=2, min_n=3)
        fit = fit_ratio(ds)
        assert fit.converged and np.all(np.isfinite(fit.estimate))
