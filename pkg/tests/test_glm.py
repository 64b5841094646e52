"""
Tests for core.glm, with statsmodels as the reference fitter
"""
import itertools
import json

import numpy as np
import pytest
import statsmodels.api as sm
from numpy.testing import assert_allclose
from scipy import stats

from core import glm
from core.exceptions import (
    ConvergenceError,
    DesignError,
    NonNestedModelError,
    RankDeficiencyError,
    UnknownTermError,
)


def make_design(X, y, names):
    """Intercept plus one term per named column"""
    X = np.column_stack([np.ones(len(y)), X])
    terms = {"intercept": (0, 1)}
    for i, name in enumerate(names):
        terms[name] = (i + 1, i + 2)
    return glm.DesignMatrix(y=np.asarray(y, dtype=float), X=X, labels=("(Intercept)",) + tuple(names),
                            terms=terms, rows=np.arange(len(y)))


def simulate(seed, n=2000, beta=(1.5, 0.3, -0.2), overdispersion=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(beta) - 1))
    mu = np.exp(beta[0] + X @ np.asarray(beta[1:]))
    if overdispersion:
        mu = mu * rng.gamma(1 / overdispersion, overdispersion, n)
    return X, rng.poisson(mu)


def test_intercept_only_is_log_mean():
    y = np.random.default_rng(0).poisson(7.3, 500)
    design = glm.DesignMatrix(y=y.astype(float), X=np.ones((500, 1)), labels=("(Intercept)",),
                              terms={"intercept": (0, 1)})
    result = glm.fit(design)
    assert_allclose(result.beta[0], np.log(y.mean()), atol=1e-10)
    assert result.converged


def test_matches_statsmodels_quasipoisson():
    X, y = simulate(1, overdispersion=0.3)
    design = make_design(X, y, ["a", "b"])
    ours = glm.fit(design)
    ref = sm.GLM(y, design.X, family=sm.families.Poisson()).fit(scale="X2")
    assert_allclose(ours.beta, ref.params, rtol=1e-6, atol=1e-8)
    assert_allclose(ours.dispersion, ref.scale, rtol=1e-6)
    assert_allclose(ours.se, ref.bse, rtol=1e-6)
    assert_allclose(ours.deviance, ref.deviance, rtol=1e-7)
    assert_allclose(ours.null_deviance, ref.null_deviance, rtol=1e-8)


def test_fixed_dispersion_matches_poisson():
    X, y = simulate(2)
    design = make_design(X, y, ["a", "b"])
    ours = glm.fit(design, fixed_dispersion=True)
    ref = sm.GLM(y, design.X, family=sm.families.Poisson()).fit()
    assert ours.dispersion == 1.0
    assert_allclose(ours.se, ref.bse, rtol=1e-6)


def test_pearson_dispersion_near_one_for_poisson():
    X, y = simulate(3, n=5000)
    assert 0.9 <= glm.fit(make_design(X, y, ["a", "b"])).dispersion <= 1.1


def test_recovery_coverage():
    truth = np.array([1.5, 0.3, -0.2])
    covered = 0
    for seed in range(100):
        X, y = simulate(100 + seed, n=1000)
        result = glm.fit(make_design(X, y, ["a", "b"]))
        covered += np.all(np.abs(result.beta - truth) <= 3 * result.se)
    assert covered >= 95


def test_rank_deficiency_names_columns():
    X, y = simulate(4, n=300)
    X = np.column_stack([X, X[:, 0] * 2.0])
    design = make_design(X, y, ["a", "b", "twice_a"])
    with pytest.raises(RankDeficiencyError) as info:
        glm.fit(design)
    assert set(info.value.columns) <= {"a", "twice_a"}
    assert len(info.value.columns) == 1


def test_design_validation():
    with pytest.raises(DesignError):
        glm.DesignMatrix(y=np.array([1.0, -1.0, 2.0]), X=np.ones((3, 1)), labels=("c",), terms={})
    with pytest.raises(DesignError):
        glm.DesignMatrix(y=np.array([1.0, 2.0]), X=np.ones((2, 2)), labels=("a", "b"), terms={})
    with pytest.raises(DesignError):
        glm.DesignMatrix(y=np.array([1.0, 2.5, 2.0]), X=np.ones((3, 1)), labels=("c",), terms={})


def test_drop_term_matches_manual_f():
    X, y = simulate(5, overdispersion=0.2)
    full_design = make_design(X, y, ["a", "b"])
    full = glm.fit(full_design)
    reduced = glm.fit(full_design.drop("b"))
    test = glm.drop_term_test(full, reduced)
    expected = (reduced.deviance - full.deviance) / full.dispersion
    assert_allclose(test.f_statistic, expected)
    assert (test.df_num, test.df_den) == (1, full.n - 3)
    assert test.p_value < 1e-6


def test_drop_term_identical_models():
    X, y = simulate(6)
    full = glm.fit(make_design(X, y, ["a", "b"]))
    test = glm.drop_term_test(full, full)
    assert (test.f_statistic, test.p_value, test.df_num) == (0.0, 1.0, 0)


def test_drop_term_requires_nesting():
    X, y = simulate(7)
    design = make_design(X, y, ["a", "b"])
    full = glm.fit(design)
    other = glm.fit(design.subset_rows(np.arange(len(y)) > 10))
    with pytest.raises(NonNestedModelError):
        glm.drop_term_test(full, other)
    swapped = glm.fit(make_design(X[:, ::-1], y, ["c", "d"]))
    with pytest.raises(NonNestedModelError):
        glm.drop_term_test(full, swapped)


def test_coefficient_report_scale():
    X, y = simulate(8)
    result = glm.fit(make_design(X, y, ["a", "b"]))
    report = glm.coefficient_report(result, "a", scale=10)
    beta, se = result.beta[1], result.se[1]
    assert_allclose(report.estimate, 100 * (np.exp(10 * beta) - 1))
    assert_allclose(report.se, 100 * np.exp(10 * beta) * 10 * se)
    assert_allclose(report.t, beta / se)
    with pytest.raises(UnknownTermError):
        glm.coefficient_report(result, "ozone")


def test_drop_unknown_term():
    X, y = simulate(9, n=100)
    with pytest.raises(UnknownTermError):
        make_design(X, y, ["a", "b"]).drop("c")


def test_fit_result_json_serializable():
    X, y = simulate(10, n=200)
    payload = glm.fit(make_design(X, y, ["a", "b"])).to_dict()
    decoded = json.loads(json.dumps(payload))
    assert decoded["labels"] == ["(Intercept)", "a", "b"]
    assert decoded["converged"] is True
    assert len(decoded["deviance_trace"]) >= 2


def test_score_equations_hold_at_solution():
    X, y = simulate(11, overdispersion=0.2)
    design = make_design(X, y, ["a", "b"])
    result = glm.fit(design)
    score = design.X.T @ (y - result.fitted)
    assert np.max(np.abs(score)) <= 1e-6 * np.sum(y)
    assert_allclose(result.fitted.sum(), y.sum(), rtol=1e-7)


def test_fit_invariant_to_reparameterization():
    X, y = simulate(12, n=800)
    design = make_design(X, y, ["a", "b"])
    A = np.array([[1.0, 0.5, -2.0], [0.0, 2.0, 1.0], [0.0, 0.0, 0.25]])
    mixed = glm.DesignMatrix(y=design.y, X=design.X @ A, labels=design.labels, terms=design.terms,
                             rows=design.rows)
    direct, transformed = glm.fit(design), glm.fit(mixed)
    assert_allclose(transformed.fitted, direct.fitted, rtol=1e-8)
    assert_allclose(A @ transformed.beta, direct.beta, rtol=1e-7, atol=1e-9)
    assert_allclose(transformed.deviance, direct.deviance, rtol=1e-10)


def test_drop_term_p_values_uniform_under_null():
    rng = np.random.default_rng(13)
    p_values = []
    for _ in range(200):
        X = rng.normal(size=(300, 3))
        y = rng.poisson(np.exp(1.0 + 0.3 * X[:, 0]))
        design = make_design(X, y, ["a", "b", "c"])
        full = glm.fit(design)
        p_values.append(glm.drop_term_test(full, glm.fit(design.drop("b", "c"))).p_value)
    assert stats.kstest(p_values, "uniform").pvalue > 0.01


def test_rejected_step_is_not_converged(monkeypatch):
    X, y = simulate(14, n=200)
    design = make_design(X, y, ["a", "b"])
    # every proposal looks marginally worse than the start
    deviances = itertools.chain([100.0], itertools.repeat(100.0 + 1e-9))
    monkeypatch.setattr(glm, "poisson_deviance", lambda y, mu: next(deviances))
    with pytest.raises(ConvergenceError) as info:
        glm.fit(design)
    assert_allclose(info.value.last_iterate[1:], 0.0)
