import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ratiotables.errors import ParseError
from ratiotables.io import (
    dumps,
    fit_report,
    read_survival_csv,
    read_tables_csv,
    write_survival_csv,
    write_tables_csv,
)
from ratiotables.odds import fit_odds
from ratiotables.strata import StratifiedDataset
from ratiotables.survival import SurvivalData

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    J = draw(st.integers(1, 6))
    p = draw(st.integers(1, 3))
    cells = draw(arrays(np.int64, (J, 4), elements=st.integers(0, 50)))
    cells[:, 1] += cells[:, 0] + cells[:, 1] == 0
    cells[:, 3] += cells[:, 2] + cells[:, 3] == 0
    X = draw(arrays(float, (J, p), elements=finite))
    names = [f"z{k}" for k in range(p)]
    return StratifiedDataset(cells, X, names, [f"s{j}" for j in range(J)])


@given(datasets())
def test_tables_round_trip(ds):
    buf = io.StringIO()
    write_tables_csv(ds, buf)
    buf.seek(0)
    assert read_tables_csv(buf) == ds


@given(st.lists(st.tuples(st.floats(0.001, 1e4), st.integers(0, 1), st.integers(1, 2)), min_size=1, max_size=20))
def test_survival_round_trip(rows):
    t, d, g = map(np.array, zip(*rows))
    data = SurvivalData(t, d, g)
    buf = io.StringIO()
    write_survival_csv(data, buf)
    buf.seek(0)
    back = read_survival_csv(buf)
    np.testing.assert_array_equal(back.time, data.time)
    np.testing.assert_array_equal(back.status, data.status)
    np.testing.assert_array_equal(back.group, data.group)


def test_tables_without_covariates_default_to_constant():
    ds = read_tables_csv(io.StringIO("stratum_id,n11,n12,n21,n22\na,2,1,1,2\nb,1,1,0,3\n"))
    assert ds.has_constant_covariate()
    assert ds.stratum_ids == ("a", "b")


@pytest.mark.parametrize(
    "text, line",
    [
        ("stratum,n11,n12,n21,n22\n", 1),
        ("stratum_id,n11,n12,n21,n22,x1\n1,2,1,1,2,1\n2,2,1,1\n", 3),
        ("stratum_id,n11,n12,n21,n22\n1,2,1,1,2\n2,2,x,1,2\n", 3),
        ("stratum_id,n11,n12,n21,n22\n1,2.5,1,1,2\n", 2),
        ("stratum_id,n11,n12,n21,n22\n1,-2,1,1,2\n", 2),
        ("stratum_id,n11,n12,n21,n22\n1,0,0,1,2\n", 2),
        ("stratum_id,n11,n12,n21,n22,x1\n1,1,1,1,1,nan\n", 2),
        ("stratum_id,n11,n12,n21,n22\n", 2),
        ("", 1),
    ],
)
def test_table_parse_errors(text, line):
    with pytest.raises(ParseError) as err:
        read_tables_csv(io.StringIO(text))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


@pytest.mark.parametrize(
    "text, line",
    [
        ("t,status,group\n", 1),
        ("time,status,group\n1,1,1\n-1,0,2\n", 3),
        ("time,status,group\n1,2,1\n", 2),
        ("time,status,group\n1,1,3\n", 2),
        ("time,status,group\n0,1,1\n", 2),
    ],
)
def test_survival_parse_errors(text, line):
    with pytest.raises(ParseError) as err:
        read_survival_csv(io.StringIO(text))
    assert err.value.line == line


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=10))
def test_dumps_round_trips_floats(values):
    assert json.loads(dumps({"v": values}))["v"] == values


def test_dumps_special_values():
    out = json.loads(dumps({"a": float("nan"), "b": np.inf, "c": [np.int64(3), True, None, "q\"x"], "d": {}}))
    assert out == {"a": None, "b": None, "c": [3, True, None, 'q"x'], "d": {}}
    assert "0.10000000000000001" in dumps(0.1)


def test_fit_report_keys():
    fit = fit_odds(StratifiedDataset([[2, 1, 1, 2], [3, 4, 1, 5]]))
    report = json.loads(dumps(fit_report(fit, model="odds")))
    assert report["schema_version"] == 1
    for key in ("estimate", "bse", "rse", "cov_model_based", "cov_model_robust", "diagnostics"):
        assert key in report
    assert report["diagnostics"]["converged"] is True
    assert report["estimate"] == list(fit.estimate)
