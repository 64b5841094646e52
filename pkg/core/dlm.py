#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Distributed Lag
Regressors for the pollutant term: the linear mean-plus-deviations block, the
spline-in-the-mean extension, the cross-basis of a distributed lag (non)linear
model, and reduction of a fitted cross-basis to an overall cumulative
exposure-response curve.

Nothing here depends on which pollutant is passed in.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from core.basis import BasisMatrix, BasisSpec, bspline, natural_spline
from core.dataset import shift
from core.exceptions import DimensionError, UnknownTermError

logger = logging.getLogger(__name__)

# Reference exposures for relative risks
REFERENCES = {"o3max8": 50.0, "o3avg": 50.0, "pm25": 20.0}
NONLINEAR_REFERENCES = {"o3max8": 75.0, "o3avg": 75.0, "pm25": 20.0}

DEFAULT_MAX_LAG = 6
DEFAULT_LAG_DF = 4
DEFAULT_DF3 = 6

Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class LagSet:
    lags: tuple

    def __post_init__(self):
        lags = tuple(int(lag) for lag in self.lags)
        object.__setattr__(self, "lags", lags)
        if not lags:
            raise ValueError("lag set must not be empty")
        if lags[0] < 0 or any(b <= a for a, b in zip(lags, lags[1:])):
            raise ValueError(f"lags must be strictly increasing and non-negative: {lags}")

    def __len__(self):
        return len(self.lags)

    def __iter__(self):
        return iter(self.lags)

    @property
    def max_lag(self):
        return self.lags[-1]

    @property
    def label(self):
        return ",".join(str(lag) for lag in self.lags)

    @classmethod
    def parse(cls, text):
        """Parse '0,1,2' or '0-3'"""
        text = str(text).strip()
        if "-" in text and "," not in text:
            lo, hi = (int(part) for part in text.split("-"))
            return cls(tuple(range(lo, hi + 1)))
        return cls(tuple(int(part) for part in text.split(",")))


@dataclass(frozen=True, eq=False)
class DlmBlock:
    """Mean-over-lags column followed by k - 1 deviation columns"""

    columns: np.ndarray
    labels: tuple
    lags: LagSet
    missing: np.ndarray
    lead: int = 0


@dataclass(frozen=True, eq=False)
class NonlinearLead:
    """Spline of the lag-set mean replacing the lead column of a DlmBlock"""

    spline: BasisMatrix
    deviations: np.ndarray
    labels: tuple
    lags: LagSet
    missing: np.ndarray

    @property
    def columns(self):
        return np.column_stack([self.spline.columns, self.deviations])

    @property
    def spline_df(self):
        return self.spline.df


@dataclass(frozen=True, eq=False)
class CrossBasis:
    """Linear-in-exposure by spline-in-lag cross-basis"""

    columns: np.ndarray
    lag_basis: np.ndarray
    labels: tuple
    max_lag: int
    missing: np.ndarray
    reference: float = None
    exposure_spec: str = "linear"
    lag_spec: BasisSpec = None

    @property
    def lag_df(self):
        return self.lag_basis.shape[1]


def _as_exposure(x):
    return np.asarray(x, dtype=float)


def lag_matrix(x, lags):
    """Raw lag columns x(t - l) for each lag in the set"""
    x = _as_exposure(x)
    lags = lags if isinstance(lags, LagSet) else LagSet(tuple(lags))
    if lags.max_lag >= len(x):
        raise ValueError(f"max lag {lags.max_lag} exceeds series length {len(x)}")
    return np.column_stack([shift(x, lag) for lag in lags])


def mean_term(x, lags, name="x"):
    """Single column: mean of x over the lag set"""
    lags = lags if isinstance(lags, LagSet) else LagSet(tuple(lags))
    raw = lag_matrix(x, lags)
    mean = raw.mean(axis=1)
    return DlmBlock(
        columns=mean[:, None],
        labels=(f"{name}:mean[{lags.label}]",),
        lags=lags,
        missing=np.isnan(mean),
    )


def dlm_block(x, lags, name="x"):
    """Linear distributed lag block in mean-plus-deviations form

    Column 1 is the mean of x over the lags, so its coefficient is the summed
    lag effect; column j (j >= 2) is x(t - l_j) minus that mean.
    """
    lags = lags if isinstance(lags, LagSet) else LagSet(tuple(lags))
    if len(lags) > len(x):
        raise ValueError(f"{len(lags)} lags exceed series length {len(x)}")
    raw = lag_matrix(x, lags)
    mean = raw.mean(axis=1)
    columns = np.column_stack([mean] + [raw[:, j] - mean for j in range(1, len(lags))])
    labels = (f"{name}:mean[{lags.label}]",) + tuple(f"{name}:dev{lag}" for lag in lags.lags[1:])
    return DlmBlock(columns=columns, labels=labels, lags=lags, missing=np.isnan(columns).any(axis=1))


def nonlinear_lead(x, lags, df3=DEFAULT_DF3, rows=None, name="x"):
    """Natural spline of the lag-set mean plus the unchanged deviation columns

    ``rows`` restricts the days the spline knots are computed from (the
    model's complete rows); other days are returned as missing.
    """
    block = dlm_block(x, lags, name=name)
    mean = block.columns[:, 0]
    usable = ~block.missing
    if rows is not None:
        selected = np.zeros(len(mean), dtype=bool)
        selected[rows] = True
        usable &= selected

    spline = natural_spline(mean[usable], df3, name=f"{name}:ns")
    full = np.full((len(mean), df3), np.nan)
    full[usable] = spline.columns
    spline = BasisMatrix(
        columns=full, spec=spline.spec, labels=spline.labels, evaluator=spline.evaluator, center=spline.center
    )
    return NonlinearLead(
        spline=spline,
        deviations=block.columns[:, 1:],
        labels=spline.labels + block.labels[1:],
        lags=block.lags,
        missing=~usable,
    )


def lag_basis_matrix(max_lag=DEFAULT_MAX_LAG, lag_df=DEFAULT_LAG_DF):
    """Lag basis evaluated on the integer lags 0..max_lag

    A single degree of freedom collapses to a constant lag profile; otherwise
    a full B-spline basis (degree up to 3) with boundary knots at 0 and max_lag.
    """
    grid = np.arange(max_lag + 1, dtype=float)
    if lag_df == 1:
        return np.ones((max_lag + 1, 1)), None
    degree = min(3, lag_df - 1)
    basis = bspline(grid, lag_df, degree=degree, boundary=(0.0, float(max_lag)), intercept=True, name="lag")
    return basis.columns, basis.spec


def cross_basis(x, max_lag=DEFAULT_MAX_LAG, lag_df=DEFAULT_LAG_DF, reference=None, lag_basis=None, name="x"):
    """Cross-basis columns sum_l x(t - l) B_m(l) for each lag function B_m

    ``lag_basis`` overrides the default B-spline lag basis with any
    (max_lag + 1) x v matrix.
    """
    x = _as_exposure(x)
    if max_lag >= len(x):
        raise ValueError(f"series of {len(x)} days is too short for max lag {max_lag}")

    spec = None
    if lag_basis is None:
        lag_basis, spec = lag_basis_matrix(max_lag, lag_df)
    lag_basis = np.asarray(lag_basis, dtype=float)
    if lag_basis.shape[0] != max_lag + 1:
        raise DimensionError(f"lag basis has {lag_basis.shape[0]} rows, expected {max_lag + 1}")

    lagged = lag_matrix(x, range(max_lag + 1))
    columns = lagged @ lag_basis
    labels = tuple(f"{name}:cb{m + 1}" for m in range(lag_basis.shape[1]))
    return CrossBasis(
        columns=columns,
        lag_basis=lag_basis,
        labels=labels,
        max_lag=max_lag,
        missing=np.isnan(lagged).any(axis=1),
        reference=reference,
        lag_spec=spec,
    )


def _curve_frame(exposure, log_rr, se):
    return pd.DataFrame({
        "exposure": exposure,
        "logRR": log_rr,
        "se": se,
        "RR": np.exp(log_rr),
        "lo95": np.exp(log_rr - Z95 * se),
        "hi95": np.exp(log_rr + Z95 * se),
    })


@dataclass(frozen=True, eq=False)
class CumulativeCurve:
    """Overall cumulative exposure-response curve from a cross-basis fit

    ``coefficient`` is the cumulative log-RR per unit exposure and
    ``variance`` its variance.
    """

    frame: pd.DataFrame
    coefficient: float
    variance: float
    reference: float

    @property
    def exposure(self):
        return self.frame["exposure"].to_numpy()

    @property
    def log_rr(self):
        return self.frame["logRR"].to_numpy()

    @property
    def se(self):
        return self.frame["se"].to_numpy()


def cumulative_effect(fit_result, cb, at, ref=None, term=None):
    """Reduce a fitted cross-basis to the overall cumulative curve

    log-RR(x) = (x - ref) * sum_m beta_m * sum_l B_m(l); the variance is the
    matching quadratic form of the dispersion-scaled covariance.
    """
    if term is None:
        indices = [fit_result.labels.index(label) for label in cb.labels if label in fit_result.labels]
        if len(indices) != len(cb.labels):
            raise DimensionError("fit does not contain the cross-basis columns")
        beta = fit_result.beta[indices]
        cov = fit_result.cov[np.ix_(indices, indices)]
    else:
        try:
            beta, cov = fit_result.coefficients(term)
        except UnknownTermError as e:
            raise DimensionError(str(e)) from e

    totals = cb.lag_basis.sum(axis=0)
    if len(beta) != len(totals):
        raise DimensionError(f"{len(beta)} coefficients for a {len(totals)}-column cross-basis")

    ref = cb.reference if ref is None else ref
    if ref is None:
        raise ValueError("a reference exposure is required")

    coefficient = float(totals @ beta)
    variance = float(totals @ cov @ totals)
    exposure = np.asarray(at, dtype=float)
    distance = exposure - ref
    log_rr = distance * coefficient
    se = np.abs(distance) * np.sqrt(max(variance, 0.0))
    return CumulativeCurve(frame=_curve_frame(exposure, log_rr, se), coefficient=coefficient,
                           variance=variance, reference=float(ref))


def risk_curve(fit_result, lead, grid, ref):
    """Relative-risk curve implied by the spline of the lag-set mean"""
    indices = [fit_result.labels.index(label) for label in lead.spline.labels]
    beta = fit_result.beta[indices]
    cov = fit_result.cov[np.ix_(indices, indices)]

    grid = np.asarray(grid, dtype=float)
    contrast = lead.spline.evaluate(grid) - lead.spline.evaluate(np.array([float(ref)]))
    log_rr = contrast @ beta
    variance = np.einsum("ij,jk,ik->i", contrast, cov, contrast)
    se = np.sqrt(np.clip(variance, 0.0, None))
    return _curve_frame(grid, log_rr, se)
