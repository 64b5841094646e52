"""
Tests for core.basis
"""
import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.basis import BasisSpec, bspline, build, dow_factor, natural_spline, tprs
from core.exceptions import BasisError


def cox_de_boor(x, knots, degree):
    """Reference B-spline values by the recursion, right end included in the last interval"""
    knots = np.asarray(knots, dtype=float)
    n = len(knots) - degree - 1
    last = np.flatnonzero(knots < knots[-1])[-1]
    basis = np.zeros((len(x), len(knots) - 1))
    for i in range(len(knots) - 1):
        if knots[i] < knots[i + 1]:
            basis[:, i] = (x >= knots[i]) & ((x < knots[i + 1]) | ((i == last) & (x == knots[-1])))
    for d in range(1, degree + 1):
        nxt = np.zeros((len(x), len(knots) - d - 1))
        for i in range(len(knots) - d - 1):
            left = knots[i + d] - knots[i]
            right = knots[i + d + 1] - knots[i + 1]
            if left > 0:
                nxt[:, i] += (x - knots[i]) / left * basis[:, i]
            if right > 0:
                nxt[:, i] += (knots[i + d + 1] - x) / right * basis[:, i + 1]
        basis = nxt
    return basis[:, :n]


def with_intercept(columns):
    return np.column_stack([np.ones(len(columns)), columns])


def fit_residual(columns, target):
    design = with_intercept(columns)
    coef = np.linalg.lstsq(design, target, rcond=None)[0]
    return np.max(np.abs(design @ coef - target))


@pytest.fixture
def covariate():
    return np.random.default_rng(0).uniform(-3, 7, 400)


def test_natural_spline_shape_and_labels(covariate):
    basis = natural_spline(covariate, 6, name="tmax")
    assert basis.columns.shape == (400, 6)
    assert basis.labels[0] == "tmax1"


@pytest.mark.parametrize("df", [1, 3, 6, 12])
def test_natural_spline_reproduces_affine(covariate, df):
    assert fit_residual(natural_spline(covariate, df).columns, 2.5 - 0.75 * covariate) < 1e-10


def test_natural_spline_df1_is_linear(covariate):
    column = natural_spline(covariate, 1).columns[:, 0]
    assert_allclose(np.corrcoef(column, covariate)[0, 1] ** 2, 1.0, atol=1e-12)


def test_natural_spline_tails_linear(covariate):
    basis = natural_spline(covariate, 5)
    for outside in (np.linspace(-10, -4, 7), np.linspace(8, 15, 7)):
        values = basis.evaluate(outside)
        assert np.max(np.abs(np.diff(values, 2, axis=0))) < 1e-8


def test_natural_spline_fits_cubic_inside_better_than_line(covariate):
    target = np.sin(covariate)
    assert fit_residual(natural_spline(covariate, 8).columns, target) < 0.05


def test_natural_spline_evaluate_matches_columns(covariate):
    basis = natural_spline(covariate, 4).centered()
    assert_allclose(basis.evaluate(covariate), basis.columns, atol=1e-12)


def test_natural_spline_too_few_values():
    with pytest.raises(BasisError):
        natural_spline(np.array([1.0, 2.0, 2.0, 1.0]), 4)
    with pytest.raises(BasisError):
        natural_spline(np.array([1.0, np.nan, 3.0]), 1)


def test_bspline_matches_recursion():
    x = np.linspace(0, 10, 101)
    knots = (2.0, 5.0, 7.5)
    basis = bspline(x, 7, degree=3, knots=knots, intercept=True)
    full = np.r_[[0.0] * 4, knots, [10.0] * 4]
    assert_allclose(basis.columns, cox_de_boor(x, full, 3), atol=1e-12)


def test_bspline_without_intercept_drops_first():
    x = np.linspace(0, 10, 51)
    with_first = bspline(x, 5, degree=3, knots=(4.0,), intercept=True).columns
    without = bspline(x, 4, degree=3, knots=(4.0,)).columns
    assert_allclose(without, with_first[:, 1:], atol=1e-14)


@pytest.mark.parametrize("degree,df", [(1, 4), (2, 5), (3, 4), (3, 8)])
def test_bspline_partition_of_unity(covariate, degree, df):
    basis = bspline(covariate, df, degree=degree, intercept=True)
    assert_allclose(basis.columns.sum(axis=1), 1.0, atol=1e-12)
    assert basis.columns.min() >= -1e-15


def test_bspline_validates():
    with pytest.raises(BasisError):
        bspline(np.linspace(0, 1, 20), 2, degree=3)
    with pytest.raises(BasisError):
        bspline(np.linspace(0, 1, 20), 5, knots=(0.5, 0.2), intercept=True, degree=2)


def test_tprs_columns_and_affine(covariate):
    basis = tprs(covariate, 8)
    assert basis.columns.shape == (400, 8)
    assert fit_residual(basis.columns, 4.0 + 1.5 * covariate) < 1e-10


def test_tprs_approximates_smooth_function():
    x = np.linspace(0, 1, 500)
    target = np.sin(2 * np.pi * x)
    assert fit_residual(tprs(x, 8).columns, target) < 0.01


def test_tprs_knot_thinning_keeps_columns():
    x = np.random.default_rng(1).uniform(0, 1, 3000)
    basis = tprs(x, 5, max_knots=300)
    assert basis.columns.shape == (3000, 5)
    assert_allclose(basis.evaluate(x[:10]), basis.columns[:10], atol=1e-12)


def test_tprs_rejects_constant():
    with pytest.raises(BasisError):
        tprs(np.ones(30), 3)


def test_dow_factor_sunday_reference():
    dates = pd.date_range("2024-06-02", periods=7, freq="D")  # starts on a Sunday
    columns = dow_factor(dates).columns
    assert_array_equal(columns[0], np.zeros(6))
    assert_array_equal(columns[1:], np.eye(6))


def test_build_dispatch(covariate):
    basis = build(covariate, BasisSpec(kind="natural-spline", df=3), name="x")
    assert basis.labels == ("x1", "x2", "x3")
    with pytest.raises(BasisError):
        BasisSpec(kind="loess", df=3)
