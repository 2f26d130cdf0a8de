import os
from pathlib import Path

import numpy as np
import pytest

from ratiotables.strata import StratifiedDataset
from ratiotables.survival import SurvivalData


def random_dataset(rng, J=None, p=1, max_n=12, min_n=1, sparse=False):
    """Random stratified tables with a full-rank design and both groups having successes."""
    while True:
        J = J or int(rng.integers(3, 12))
        N1 = rng.integers(min_n, max_n + 1, size=J)
        N2 = rng.integers(min_n, max_n + 1, size=J)
        p1 = rng.uniform(0.05, 0.5 if sparse else 0.95, size=J)
        p2 = rng.uniform(0.05, 0.5 if sparse else 0.95, size=J)
        n11 = rng.binomial(N1, p1)
        n21 = rng.binomial(N2, p2)
        counts = np.column_stack([n11, N1 - n11, n21, N2 - n21])
        X = np.ones((J, 1))
        if p > 1:
            X = np.column_stack([X, rng.normal(size=(J, p - 1))])
        A = n11 * (N2 - n21)
        B = (N1 - n11) * n21
        if n11.sum() and n21.sum() and A.sum() and B.sum() and np.linalg.matrix_rank(X) == p:
            return StratifiedDataset(counts, X)


def random_survival(rng, n=40, ties=True, censor_rate=0.3):
    group = rng.integers(1, 3, size=n)
    group[:2] = (1, 2)
    if ties:
        time = rng.integers(1, 8, size=n).astype(float)
    else:
        time = rng.permutation(np.arange(1, n + 1)).astype(float) + rng.uniform(0, 0.5, size=n)
    status = (rng.uniform(size=n) > censor_rate).astype(int)
    status[:2] = 1
    return SurvivalData(time, status, group)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def veteran_csv():
    path = os.environ.get("RATIOTABLES_VETERAN_CSV")
    if not path or not Path(path).is_file():
        pytest.skip("set RATIOTABLES_VETERAN_CSV to a time,status,group file to run Veteran checks")
    return Path(path)


# (criterion, status, detail) lines collected by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{status:7s} criterion {criterion}: {detail}")
