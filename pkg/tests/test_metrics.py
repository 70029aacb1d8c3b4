import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saemort.metrics import (
    LONG_COLUMNS,
    MEASURES,
    PerformanceReport,
    bias,
    coverage,
    emp_se,
    performance,
    rmse,
    summarize_e0,
    width,
)

est = arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)), elements=st.floats(-10, 10))


@given(est)
def test_rmse_decomposition(e):
    truth = np.linspace(-1, 1, e.shape[1])
    n = e.shape[0]
    lhs = rmse(e, truth) ** 2
    rhs = bias(e, truth) ** 2 + (n - 1) / n * emp_se(e) ** 2
    assert np.all(np.abs(lhs - rhs) <= 1e-10 * (1 + lhs))


@given(est, st.floats(0.0, 3.0))
def test_coverage_in_unit_interval(e, half):
    truth = np.zeros(e.shape[1])
    c = coverage(e - half, e + half, truth)
    assert np.all((0 <= c) & (c <= 1))
    assert np.allclose(width(e - half, e + half), 2 * half)


def test_hand_computed_values():
    e = np.array([[1.0], [2.0], [4.0]])
    assert bias(e, 2.0)[0] == pytest.approx(1 / 3)
    assert emp_se(e)[0] == pytest.approx(np.std([1, 2, 4], ddof=1))
    assert rmse(e, 2.0)[0] == pytest.approx(np.sqrt(5 / 3))
    lo, hi = e - 0.5, e + 0.5
    assert coverage(lo, hi, 2.0)[0] == pytest.approx(1 / 3)
    assert coverage(np.array([[2.0]]), np.array([[2.0]]), 2.0)[0] == 1.0


def test_validation():
    with pytest.raises(ValueError):
        emp_se(np.ones((1, 2)))
    with pytest.raises(ValueError):
        coverage(np.ones((2, 1)), np.zeros((2, 1)), 0.0)
    with pytest.raises(ValueError):
        width(np.ones((2, 1)), np.ones((3, 1)))


def test_performance_with_single_replicate_and_exclusions():
    p = performance(np.ones((1, 3)), np.zeros((1, 3)), 2 * np.ones((1, 3)), np.ones(3))
    assert p["n_effective"] == 1 and np.all(np.isnan(p["empSE"]))
    assert np.all(p["covCI"] == 1.0)
    p = performance(np.ones((4, 2)), np.zeros((4, 2)), np.ones((4, 2)), np.ones(2), include=[True, False, False, False])
    assert p["n_effective"] == 1
    p = performance(np.ones((2, 2)), np.zeros((2, 2)), np.ones((2, 2)), np.ones(2), include=[False, False])
    assert p["n_effective"] == 0 and all(np.all(np.isnan(p[m])) for m in MEASURES)


@settings(max_examples=30)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 100)))
def test_e0_summary_matches_numpy(v):
    s = summarize_e0(v, 50.0)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    assert (s.q1, s.median, s.q3) == pytest.approx((q1, med, q3))
    iqr = q3 - q1
    assert s.whisker_high == v[v <= q3 + 1.5 * iqr].max()
    assert s.whisker_low == v[v >= q1 - 1.5 * iqr].min()
    assert s.minimum <= s.whisker_low and s.whisker_high <= s.maximum
    assert s.iqr == pytest.approx(q3 - q1)
    assert s.n == v.size


def test_report_rows_and_csv():
    rep = PerformanceReport()
    perf = performance(np.ones((3, 2)), np.zeros((3, 2)), 2 * np.ones((3, 2)), np.ones(2))
    rep.add("TOPALS", "dk1", 1000.0, "low", 2000, ["0", "1"], perf)
    assert len(rep.rows) == 2 * len(MEASURES)
    assert len(rep.select(measure="bias")) == 2
    buf = io.StringIO()
    rep.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == LONG_COLUMNS
    assert len(lines) == 11
    assert "upper - lower" in rep.metadata["widCI"]
