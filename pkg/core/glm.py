#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
GLM
Quasipoisson log-link regression fitted by iteratively reweighted least
squares, with Pearson dispersion, coefficient reports and quasi-likelihood
F tests for dropping a term.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, stats
from scipy.special import xlogy

from core.exceptions import (
    ConvergenceError,
    DesignError,
    NonNestedModelError,
    RankDeficiencyError,
    UnknownTermError,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
MAX_HALVINGS = 10


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Response, covariates and bookkeeping for one model

    ``terms`` maps a term name to the (start, stop) column range it occupies;
    ``rows`` holds the series positions the rows came from and ``dates`` their
    calendar days. ``components`` keeps the basis objects behind special
    terms (cross-basis, spline lead) for later curve reduction.
    """

    y: np.ndarray
    X: np.ndarray
    labels: tuple
    terms: dict
    rows: np.ndarray = None
    dates: np.ndarray = None
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        n, p = self.X.shape
        if len(self.y) != n:
            raise DesignError(f"response has {len(self.y)} rows, covariates {n}")
        if n == 0:
            raise DesignError("design has no rows")
        if n <= p:
            raise DesignError(f"design needs more rows than columns ({n} <= {p})")
        if len(self.labels) != p:
            raise DesignError("one label per column is required")
        if np.any(self.y < 0) or np.any(self.y % 1 != 0):
            raise DesignError("response must be non-negative integer counts")
        if not np.all(np.isfinite(self.X)):
            raise DesignError("covariates contain non-finite values")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def columns_of(self, term):
        if term not in self.terms:
            raise UnknownTermError(f"unknown term '{term}'")
        start, stop = self.terms[term]
        return slice(start, stop)

    def drop(self, *names):
        """Design without the named terms (same rows)"""
        for name in names:
            self.columns_of(name)
        keep, terms, position = [], {}, 0
        for term, (start, stop) in self.terms.items():
            if term in names:
                continue
            keep.extend(range(start, stop))
            terms[term] = (position, position + stop - start)
            position += stop - start
        return replace(
            self, X=self.X[:, keep], labels=tuple(self.labels[i] for i in keep), terms=terms
        )

    def subset_rows(self, mask):
        """Design restricted to the rows selected by a boolean mask or index array"""
        return DesignMatrix(
            y=self.y[mask],
            X=self.X[mask],
            labels=self.labels,
            terms=self.terms,
            rows=None if self.rows is None else self.rows[mask],
            dates=None if self.dates is None else self.dates[mask],
            components=self.components,
        )

    def check_rank(self):
        """Raise RankDeficiencyError naming columns that depend on the others"""
        norms = np.linalg.norm(self.X, axis=0)
        zero = [self.labels[i] for i in np.flatnonzero(norms == 0)]
        if zero:
            raise RankDeficiencyError("all-zero design columns", zero)
        _, r, pivot = linalg.qr(self.X / norms, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > diag[0] * 1e-9))
        if rank < self.p:
            raise RankDeficiencyError("design is rank deficient", [self.labels[i] for i in pivot[rank:]])


@dataclass(eq=False)
class FitResult:
    beta: np.ndarray
    cov: np.ndarray
    dispersion: float
    deviance: float
    null_deviance: float
    fitted: np.ndarray
    iterations: int
    converged: bool
    labels: tuple
    terms: dict
    n: int
    rows: np.ndarray = None
    trace: list = field(default_factory=list)

    @property
    def p(self):
        return len(self.beta)

    @property
    def df_residual(self):
        return self.n - self.p

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov))

    def coefficients(self, term):
        """Coefficients and covariance block of a term"""
        if term not in self.terms:
            raise UnknownTermError(f"unknown term '{term}'")
        start, stop = self.terms[term]
        return self.beta[start:stop], self.cov[start:stop, start:stop]

    def predict(self, X):
        """Expected counts for new covariate rows"""
        return np.exp(np.asarray(X) @ self.beta)

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "coefficients": [float(b) for b in self.beta],
            "se": [float(s) for s in self.se],
            "dispersion": float(self.dispersion),
            "deviance": float(self.deviance),
            "null_deviance": float(self.null_deviance),
            "n": int(self.n),
            "p": int(self.p),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "deviance_trace": [float(d) for d in self.trace],
        }


@dataclass(frozen=True)
class DropTest:
    f_statistic: float
    df_num: int
    df_den: int
    p_value: float


@dataclass(frozen=True)
class CoefficientReport:
    """Percent change per ``scale`` exposure units"""

    term: str
    estimate: float
    se: float
    t: float
    p_value: float


def poisson_deviance(y, mu):
    return 2.0 * float(np.sum(xlogy(y, y / mu) - (y - mu)))


def _weighted_solve(X, w, z):
    """Weighted least squares by QR of sqrt(w) X"""
    root = np.sqrt(w)
    q, r = linalg.qr(X * root[:, None], mode="economic")
    return linalg.solve_triangular(r, q.T @ (z * root)), r


def fit(design, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, fixed_dispersion=False):
    """Fit a quasipoisson log-link GLM by IRLS

    Starts from beta = 0 with the intercept at log(mean(y)) (plus 0.5 when the
    mean is zero). Deviance increases trigger step halving. Stops when the
    relative deviance change or the score sup-norm drops below ``tol``. A step
    that no halving improves is rejected and raises ConvergenceError unless
    the score is already below ``tol``.
    """
    design.check_rank()
    X, y = design.X, np.asarray(design.y, dtype=float)
    n, p = X.shape

    # Starting point
    beta = np.zeros(p)
    if "intercept" in design.terms:
        start = design.terms["intercept"][0]
        mean = y.mean()
        beta[start] = np.log(mean + (0.5 if mean == 0 else 0.0))

    eta = X @ beta
    mu = np.exp(eta)
    deviance = poisson_deviance(y, mu)
    trace = [deviance]
    converged = False
    iteration = 0

    for iteration in range(1, max_iter + 1):
        # Weighted least squares on the working response
        z = eta + (y - mu) / mu
        proposal, _ = _weighted_solve(X, mu, z)

        new_eta = X @ proposal
        new_mu = np.exp(new_eta)
        new_deviance = poisson_deviance(y, new_mu)

        # Halve the step back towards beta until the deviance stops increasing
        halvings = 0
        while (not np.isfinite(new_deviance) or new_deviance > deviance) and halvings < MAX_HALVINGS:
            proposal = (beta + proposal) / 2
            new_eta = X @ proposal
            new_mu = np.exp(new_eta)
            new_deviance = poisson_deviance(y, new_mu)
            halvings += 1
        if halvings:
            logger.debug(f"IRLS iteration {iteration}: {halvings} step halving(s)")

        # No halving decreased the deviance: reject the step, only the score can end the fit
        if halvings == MAX_HALVINGS and not new_deviance <= deviance:
            score = np.max(np.abs(X.T @ (y - mu)))
            converged = score < tol
            logger.debug(f"IRLS iteration {iteration}: step rejected, score {score:.3g}")
            break

        change = abs(new_deviance - deviance) / (abs(new_deviance) + 0.1)
        beta, eta, mu, deviance = proposal, new_eta, new_mu, new_deviance
        trace.append(deviance)

        score = np.max(np.abs(X.T @ (y - mu)))
        if change < tol or score < tol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations (deviance {deviance:.6g})",
            last_iterate=beta,
        )

    # Unscaled covariance (X'WX)^-1 from the final R factor
    _, r = _weighted_solve(X, mu, eta)
    r_inv = linalg.solve_triangular(r, np.eye(p))
    unscaled = r_inv @ r_inv.T

    if fixed_dispersion:
        dispersion = 1.0
    else:
        dispersion = float(np.sum((y - mu) ** 2 / mu) / (n - p))

    null_mu = np.full(n, y.mean())
    result = FitResult(
        beta=beta,
        cov=dispersion * unscaled,
        dispersion=dispersion,
        deviance=deviance,
        null_deviance=poisson_deviance(y, null_mu),
        fitted=mu,
        iterations=iteration,
        converged=True,
        labels=design.labels,
        terms=dict(design.terms),
        n=n,
        rows=design.rows,
        trace=trace,
    )
    logger.debug(f"IRLS converged in {iteration} iterations, deviance {deviance:.6g}, dispersion {dispersion:.4f}")
    return result


def drop_term_test(full, reduced):
    """Quasi-likelihood F test for the columns in ``full`` but not in ``reduced``"""
    if full.n != reduced.n:
        raise NonNestedModelError(f"models fitted on different rows ({full.n} vs {reduced.n})")
    if full.rows is not None and reduced.rows is not None and not np.array_equal(full.rows, reduced.rows):
        raise NonNestedModelError("models fitted on different rows")
    extra = set(reduced.labels) - set(full.labels)
    if extra:
        raise NonNestedModelError(f"reduced model has columns not in the full model: {sorted(extra)}")

    df_num = full.p - reduced.p
    df_den = full.df_residual
    if df_num == 0:
        return DropTest(f_statistic=0.0, df_num=0, df_den=df_den, p_value=1.0)

    gain = max(reduced.deviance - full.deviance, 0.0)
    f_statistic = gain / df_num / full.dispersion
    p_value = float(stats.f.sf(f_statistic, df_num, df_den))
    return DropTest(f_statistic=f_statistic, df_num=df_num, df_den=df_den, p_value=p_value)


def coefficient_report(fit_result, term, scale=10.0):
    """Percent rise in the mean per ``scale`` units for a lead coefficient

    ``term`` is either a column label or a term name, in which case the first
    column of the term (the lead coefficient) is reported.
    """
    if term in fit_result.labels:
        index = fit_result.labels.index(term)
    elif term in fit_result.terms:
        index = fit_result.terms[term][0]
    else:
        raise UnknownTermError(f"unknown term '{term}'")

    beta = float(fit_result.beta[index])
    se_beta = float(np.sqrt(fit_result.cov[index, index]))
    growth = np.exp(beta * scale)
    estimate = 100.0 * (growth - 1.0)
    se = 100.0 * growth * scale * se_beta
    t = beta / se_beta if se_beta > 0 else 0.0
    p_value = float(2.0 * stats.norm.sf(abs(t)))
    return CoefficientReport(term=term, estimate=estimate, se=se, t=t, p_value=p_value)
