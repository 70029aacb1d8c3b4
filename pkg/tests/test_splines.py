import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from saemort.splines import bspline_basis, difference_matrix, equispaced_knots, linear_bspline_basis


@given(n=st.integers(4, 40), order=st.integers(1, 3))
def test_difference_matrix_annihilates_low_degree_polynomials(n, order):
    D = difference_matrix(n, order)
    assert D.shape == (n - order, n)
    x = np.arange(n, dtype=float)
    for deg in range(order):
        np.testing.assert_allclose(D @ x ** deg, 0.0, atol=1e-8 * n ** deg)
    if order < n - 1:
        assert np.any(np.abs(D @ x ** order) > 0.5)


def test_difference_matrix_stencils():
    np.testing.assert_array_equal(difference_matrix(3, 1), [[-1, 1, 0], [0, -1, 1]])
    np.testing.assert_array_equal(difference_matrix(3, 2), [[1, -2, 1]])
    with pytest.raises(ValueError):
        difference_matrix(3, 3)


def test_bspline_basis_partition_of_unity_and_size():
    B = bspline_basis(np.arange(100))
    assert B.shape == (100, 23)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(B >= 0)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0, 100), spacing=st.sampled_from([2.0, 5.0, 10.0]))
def test_bspline_basis_matches_scipy_spline(x, spacing):
    t = equispaced_knots(0.0, 100.0, spacing, 3)
    coefs = np.sin(np.arange(t.size - 4))
    B = bspline_basis([x], spacing)
    assert B @ coefs == pytest.approx(float(BSpline(t, coefs, 3)(x)), abs=1e-10)


def test_bspline_basis_range_check():
    with pytest.raises(ValueError):
        bspline_basis([101.0])


@given(st.lists(st.floats(0, 99), min_size=1, max_size=20))
def test_linear_basis_interpolates_piecewise_linear(xs):
    knots = np.array([0, 1, 10, 20, 40, 70, 99], float)
    vals = np.array([3.0, -1.0, 2.0, 0.5, 4.0, -2.0, 1.0])
    B = linear_bspline_basis(xs, knots)
    np.testing.assert_allclose(B @ vals, np.interp(xs, knots, vals), atol=1e-12)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)


def test_linear_basis_rejects_unsorted_knots():
    with pytest.raises(ValueError):
        linear_bspline_basis([1.0], [0, 5, 3])
