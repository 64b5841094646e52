#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Basis
Smoother bases used by the regression models: natural cubic splines, low-rank
thin plate regression splines, B-splines and the day-of-week factor.

Every builder returns a BasisMatrix that remembers how to evaluate itself at
new covariate values, so curves can be drawn over an exposure grid with the
same knots and centering as the fitted model.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.interpolate import BSpline

from core.exceptions import BasisError

logger = logging.getLogger(__name__)

BASIS_KINDS = ("natural-spline", "tprs", "bspline", "factor")

# Kernel size limit before the thin plate eigendecomposition
TPRS_MAX_KNOTS = 2000

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat")


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    df: int
    knots: tuple = None
    boundary: tuple = None
    degree: int = 3
    intercept: bool = False

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise BasisError(f"unknown basis kind '{self.kind}'")
        if int(self.df) < 1:
            raise BasisError(f"df must be >= 1, got {self.df}")
        if self.kind == "bspline" and self.df < self.degree:
            raise BasisError(f"bspline df ({self.df}) < degree ({self.degree})")
        if self.knots is not None and np.any(np.diff(self.knots) <= 0):
            raise BasisError("explicit knots must be strictly increasing")


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """Evaluated basis columns plus what is needed to evaluate them again"""

    columns: np.ndarray
    spec: BasisSpec
    labels: tuple
    evaluator: object = None
    center: np.ndarray = None

    @property
    def df(self):
        return self.columns.shape[1]

    def centered(self):
        """Column-mean-centered copy; the offsets carry over to evaluate()"""
        means = self.columns.mean(axis=0)
        offset = means if self.center is None else self.center + means
        return replace(self, columns=self.columns - means, center=offset)

    def evaluate(self, x):
        """Evaluate the basis at new covariate values"""
        if self.evaluator is None:
            raise BasisError("basis cannot be re-evaluated")
        values = self.evaluator(x)
        if self.center is not None:
            values = values - self.center
        return values

    def relabel(self, prefix):
        return replace(self, labels=tuple(f"{prefix}{i + 1}" for i in range(self.df)))

    def to_frame(self):
        return pd.DataFrame(self.columns, columns=list(self.labels))


def _as_covariate(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise BasisError("covariate must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise BasisError("covariate contains missing or non-finite values")
    return x


def _quantile_knots(x, count, lo, hi):
    """Interior knots at evenly spaced quantiles, strictly inside (lo, hi)"""
    if count <= 0:
        return np.empty(0)
    probs = np.arange(1, count + 1) / (count + 1)
    knots = np.quantile(x, probs)
    if np.all(np.diff(knots) > 0) and knots[0] > lo and knots[-1] < hi:
        return knots
    # heavy ties: place on quantiles of the distinct values instead
    return np.quantile(np.unique(x), probs)


def _explicit_knots(knots, lo, hi):
    knots = np.asarray(knots, dtype=float)
    if knots.size and (knots[0] <= lo or knots[-1] >= hi):
        raise BasisError("interior knots must lie strictly inside the boundary")
    return knots


def natural_spline(x, df, knots=None, boundary=None, name="ns"):
    """Natural cubic spline basis with df columns (no intercept column)

    Cubic between knots, linear beyond the boundary knots. With an intercept
    the columns span every natural cubic spline on the knots.
    """
    x = _as_covariate(x)
    spec = BasisSpec(kind="natural-spline", df=df, knots=knots, boundary=boundary)
    distinct = np.unique(x)
    if len(distinct) < df + 1:
        raise BasisError(f"natural spline with df={df} needs {df + 1} distinct values, got {len(distinct)}")

    lo, hi = boundary if boundary is not None else (distinct[0], distinct[-1])
    interior = _explicit_knots(knots, lo, hi) if knots is not None else _quantile_knots(x, df - 1, lo, hi)
    if len(interior) != df - 1:
        raise BasisError(f"natural spline with df={df} needs {df - 1} interior knots")

    t = np.r_[[lo] * 4, interior, [hi] * 4]
    n_basis = len(t) - 4
    spline = BSpline(t, np.eye(n_basis), 3)
    first = spline.derivative(1)

    # zero second derivative at both boundaries; first B-spline dropped
    constraint = spline.derivative(2)(np.array([lo, hi]))[:, 1:]
    q, _ = np.linalg.qr(constraint.T, mode="complete")
    projection = q[:, 2:]

    def evaluate(values):
        values = np.asarray(values, dtype=float)
        inside = np.clip(values, lo, hi)
        raw = spline(inside)
        below = values < lo
        above = values > hi
        if np.any(below):
            raw[below] = spline(lo) + np.outer(values[below] - lo, first(lo))
        if np.any(above):
            raw[above] = spline(hi) + np.outer(values[above] - hi, first(hi))
        return raw[:, 1:] @ projection

    columns = evaluate(x)
    labels = tuple(f"{name}{i + 1}" for i in range(df))
    return BasisMatrix(columns=columns, spec=spec, labels=labels, evaluator=evaluate)


def tprs(x, df, max_knots=TPRS_MAX_KNOTS, name="tp"):
    """Low-rank thin plate regression spline basis for one covariate

    The cubic thin plate kernel is built on the distinct covariate values
    (thinned to ``max_knots`` order statistics), its df + 1 leading
    eigenvectors are constrained orthogonal to the linear null space, and the
    linear null-space column is appended: df - 1 wiggly columns plus one
    linear column. Used unpenalized at fixed df.
    """
    x = _as_covariate(x)
    spec = BasisSpec(kind="tprs", df=df)
    distinct = np.unique(x)
    if len(distinct) < 2:
        raise BasisError("thin plate spline of a constant covariate")
    if len(distinct) < df + 2:
        raise BasisError(f"thin plate spline with df={df} needs {df + 2} distinct values, got {len(distinct)}")

    if len(distinct) > max_knots:
        picks = np.round(np.linspace(0, len(distinct) - 1, max_knots)).astype(int)
        distinct = distinct[picks]

    lo = distinct[0]
    scale = distinct[-1] - lo
    knots = (distinct - lo) / scale

    kernel = np.abs(knots[:, None] - knots[None, :]) ** 3 / 12.0
    eigvals, eigvecs = linalg.eigh(kernel)
    order = np.argsort(-np.abs(eigvals), kind="stable")[: df + 1]
    leading = eigvecs[:, order]
    # fix eigenvector signs
    signs = np.sign(leading[np.argmax(np.abs(leading), axis=0), np.arange(leading.shape[1])])
    leading = leading * signs

    null_space = np.column_stack([np.ones_like(knots), knots])
    q, _ = np.linalg.qr(leading.T @ null_space, mode="complete")
    weights = leading @ q[:, 2:]

    def evaluate(values):
        u = (np.asarray(values, dtype=float) - lo) / scale
        design = np.abs(u[:, None] - knots[None, :]) ** 3 / 12.0
        return np.column_stack([design @ weights, u])

    columns = evaluate(x)
    labels = tuple(f"{name}{i + 1}" for i in range(df))
    return BasisMatrix(columns=columns, spec=spec, labels=labels, evaluator=evaluate)


def bspline(x, df, degree=3, knots=None, boundary=None, intercept=False, name="bs"):
    """B-spline basis with knots at quantiles of x

    Without intercept the first B-spline is dropped (df columns of a df + 1
    function basis); with intercept all df functions are kept and the rows
    sum to one on the boundary interval.
    """
    x = _as_covariate(x)
    if df < degree:
        raise BasisError(f"bspline df ({df}) < degree ({degree})")
    spec = BasisSpec(kind="bspline", df=df, knots=knots, boundary=boundary, degree=degree, intercept=intercept)

    n_interior = df - degree - (1 if intercept else 0)
    if n_interior < 0:
        raise BasisError(f"bspline with intercept needs df >= degree + 1, got df={df}")

    lo, hi = boundary if boundary is not None else (x.min(), x.max())
    if not hi > lo:
        raise BasisError("bspline boundary has zero width")
    interior = _explicit_knots(knots, lo, hi) if knots is not None else _quantile_knots(x, n_interior, lo, hi)
    if len(interior) != n_interior:
        raise BasisError(f"bspline with df={df} needs {n_interior} interior knots")

    t = np.r_[[lo] * (degree + 1), interior, [hi] * (degree + 1)]
    n_basis = len(t) - degree - 1
    spline = BSpline(t, np.eye(n_basis), degree)
    keep = slice(0, None) if intercept else slice(1, None)

    def evaluate(values):
        return spline(np.asarray(values, dtype=float))[:, keep]

    columns = evaluate(x)
    labels = tuple(f"{name}{i + 1}" for i in range(df))
    return BasisMatrix(columns=columns, spec=spec, labels=labels, evaluator=evaluate)


def dow_factor(dates, name="dow"):
    """Day-of-week indicators, Sunday as the reference level"""

    def evaluate(values):
        weekday = pd.DatetimeIndex(values).dayofweek.to_numpy()
        # pandas: Monday=0 .. Sunday=6
        return (weekday[:, None] == np.arange(6)[None, :]).astype(float)

    spec = BasisSpec(kind="factor", df=6)
    labels = tuple(f"{name}_{day}" for day in WEEKDAYS)
    return BasisMatrix(columns=evaluate(dates), spec=spec, labels=labels, evaluator=evaluate)


def build(x, spec, name=None):
    """Construct a basis from a BasisSpec"""
    if spec.kind == "natural-spline":
        return natural_spline(x, spec.df, knots=spec.knots, boundary=spec.boundary, name=name or "ns")
    if spec.kind == "tprs":
        return tprs(x, spec.df, name=name or "tp")
    if spec.kind == "bspline":
        return bspline(
            x, spec.df, degree=spec.degree, knots=spec.knots, boundary=spec.boundary,
            intercept=spec.intercept, name=name or "bs",
        )
    return dow_factor(x, name=name or "dow")
