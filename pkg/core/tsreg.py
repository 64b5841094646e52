#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Time Series Regression
Model specification and design assembly for the daily mortality models, and
the workflows built on them: meteorology drop tests, pollutant lag sweeps,
the combined cross-basin table, nonlinear lead curves and cumulative
cross-basis curves.

The basic model is

    log mu_t = mean + pollutant term + s(t; nyr * df0) + DOW
               + sum over met variables M of s(M(t); df1) + s(mean M(t-1..t-3); df2)

fitted as a quasipoisson GLM on the days where every referenced lag is
present.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from core import glm
from core.basis import BasisSpec, build, dow_factor, natural_spline, tprs
from core.dataset import complete_rows, lag_mean, resolve_field
from core.dlm import (
    DEFAULT_DF3,
    DEFAULT_LAG_DF,
    DEFAULT_MAX_LAG,
    NONLINEAR_REFERENCES,
    REFERENCES,
    LagSet,
    cross_basis,
    cumulative_effect,
    dlm_block,
    mean_term,
    nonlinear_lead,
    risk_curve,
)
from core.exceptions import DesignError
from core.meta import EffectEstimate, pool, pooled_curve
from utils.worker_pool import map_jobs

logger = logging.getLogger(__name__)

MET_VARIABLES = ("tmax", "tmin", "rhmax")
MET_FORMS = {"current": (0,), "mean123": (1, 2, 3)}
FORM_LABELS = {"current": "Current day 0", "mean123": "Mean of 1,2,3"}
MET_NAMES = {
    "tmax": "Daily Max Temperature",
    "tmin": "Daily Min Temperature",
    "rhmax": "Daily Relative Humidity",
}
AQ_KINDS = ("none", "dlm", "mean", "nonlinear", "crossbasis")
TIME_KINDS = ("spline", "tprs")

# Lag combinations of the single-basin pollutant tables
SWEEP_LAGS = ("0", "1", "2", "0,1", "1,2", "0,1,2", "0,1,2,3", "0-4", "0-5", "0-6")

TABLES = {
    1: {"kind": "met", "basin": "SC"},
    2: {"kind": "sweep", "basin": "SC", "pollutant": "ozone", "cells": [(lags, True) for lags in SWEEP_LAGS]},
    3: {"kind": "sweep", "basin": "SC", "pollutant": "pm25", "cells": [(lags, True) for lags in SWEEP_LAGS]},
    4: {"kind": "met", "basin": "SFB"},
    5: {"kind": "sweep", "basin": "SFB", "pollutant": "ozone",
        "cells": [(lags, True) for lags in SWEEP_LAGS] + [("0", False), ("0,1", False)]},
    6: {"kind": "sweep", "basin": "SFB", "pollutant": "pm25",
        "cells": [(lags, True) for lags in SWEEP_LAGS] + [(lags, False) for lags in ("0-3", "0-4", "0-5", "0-6")]},
    7: {"kind": "combined"},
}

COMBINED_ROWS = (
    ("ozone", "0,1"),
    ("ozone", "0,1,2"),
    ("ozone", "0,1,2,3"),
    ("pm25", "0,1"),
    ("pm25", "0,1,2,3"),
    ("pm25", "0-5"),
)

# (df0, df1, df2)
SENSITIVITY_PRESETS = {
    "base": (7, 6, 6),
    "a": (10, 6, 6),
    "b": (7, 3, 3),
    "c": (10, 3, 3),
}

EXPOSURE_SCALE = 10.0


@dataclass(frozen=True)
class MetTerm:
    variable: str
    form: str = "current"
    df: int = 6
    kind: str = "natural-spline"

    def __post_init__(self):
        if self.variable not in MET_VARIABLES:
            raise DesignError(f"unknown meteorology variable '{self.variable}'")
        if self.form not in MET_FORMS:
            raise DesignError(f"meteorology form must be one of {tuple(MET_FORMS)}")
        if not 1 <= self.df <= 10:
            raise DesignError(f"meteorology df must be in [1, 10], got {self.df}")

    @property
    def lags(self):
        return MET_FORMS[self.form]

    @property
    def name(self):
        return f"{self.variable}[0]" if self.form == "current" else f"{self.variable}[1-3]"


@dataclass(frozen=True)
class AqTerm:
    kind: str = "none"
    pollutant: str = "o3max8"
    lags: LagSet = LagSet((0,))
    df3: int = DEFAULT_DF3
    max_lag: int = DEFAULT_MAX_LAG
    lag_df: int = DEFAULT_LAG_DF

    def __post_init__(self):
        if self.kind not in AQ_KINDS:
            raise DesignError(f"unknown pollutant term kind '{self.kind}'")
        object.__setattr__(self, "pollutant", resolve_field(self.pollutant))
        if not isinstance(self.lags, LagSet):
            object.__setattr__(self, "lags", LagSet.parse(self.lags))

    @property
    def required_lags(self):
        if self.kind == "none":
            return ()
        if self.kind == "crossbasis":
            return tuple(range(self.max_lag + 1))
        return self.lags.lags


def default_met(df1=6, df2=6, kind="natural-spline", variables=MET_VARIABLES):
    """Current-day and mean(1-3) terms for each meteorology variable"""
    terms = []
    for variable in variables:
        terms.append(MetTerm(variable, "current", df1, kind))
        terms.append(MetTerm(variable, "mean123", df2, kind))
    return tuple(terms)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one quasipoisson model"""

    outcome: str = "ac65p"
    df0: float = 7
    met: tuple = field(default_factory=default_met)
    dow: bool = True
    aq: AqTerm = AqTerm()
    time: str = "spline"
    time_df_day: int = 8
    time_df_year: int = 4

    def __post_init__(self):
        object.__setattr__(self, "outcome", resolve_field(self.outcome))
        if self.time not in TIME_KINDS:
            raise DesignError(f"time term must be one of {TIME_KINDS}")
        if self.time == "spline" and not 1 <= self.df0 <= 20:
            raise DesignError(f"df0 must be in [1, 20], got {self.df0}")
        names = [term.name for term in self.met]
        if len(names) != len(set(names)):
            raise DesignError("duplicate meteorology terms")

    @property
    def rh_included(self):
        return any(term.variable == "rhmax" for term in self.met)

    def with_aq(self, aq):
        return replace(self, aq=aq)

    def without_rh(self):
        return replace(self, met=tuple(term for term in self.met if term.variable != "rhmax"))

    def with_dfs(self, df0, df1, df2):
        met = tuple(replace(term, df=df1 if term.form == "current" else df2) for term in self.met)
        return replace(self, df0=df0, met=met)

    def required_lags(self):
        """Lag set per field that a day needs to enter the model"""
        lags = {self.outcome: {0}}
        for term in self.met:
            lags.setdefault(term.variable, set()).update(term.lags)
        if self.aq.kind != "none":
            lags.setdefault(self.aq.pollutant, set()).update(self.aq.required_lags)
        return {name: tuple(sorted(values)) for name, values in lags.items()}


def trend_df(days, df0):
    """Total trend df: ceil(years spanned * df0)"""
    years = (days[-1] - days[0]) / 365.25
    return max(1, math.ceil(round(years * df0, 6)))


def assemble(series, spec):
    """Build the DesignMatrix of ``spec`` on the complete rows of ``series``"""
    # Days with every field the model reads, at every lag it reads
    lags = spec.required_lags()
    rows = complete_rows(series, tuple(lags), lags)
    if rows.size == 0:
        raise DesignError(f"no complete rows for outcome {spec.outcome} in basin {series.basin}")

    # Column blocks in model order: intercept, time, day of week, weather, pollutant
    blocks = [("intercept", np.ones((rows.size, 1)), ("(Intercept)",))]
    components = {}

    if spec.time == "spline":
        days = series.time_index[rows]
        trend = natural_spline(days, trend_df(days, spec.df0), name="trend").centered()
        blocks.append(("trend", trend.columns, trend.labels))
    else:
        day = tprs(series.day_index[rows].astype(float), spec.time_df_day, name="day").centered()
        year = tprs(series.year_index[rows].astype(float), spec.time_df_year, name="year").centered()
        blocks.append(("time_day", day.columns, day.labels))
        blocks.append(("time_year", year.columns, year.labels))

    if spec.dow:
        dow = dow_factor(series.dates[rows])
        blocks.append(("dow", dow.columns, dow.labels))

    # Weather smooths, centered over the complete rows
    for term in spec.met:
        values = lag_mean(series, term.variable, term.lags)[rows]
        basis = build(values, BasisSpec(kind=term.kind, df=term.df), name=f"{term.name}:").centered()
        blocks.append((term.name, basis.columns, basis.labels))

    # Pollutant term; spline leads and cross-bases are kept for curve reduction
    aq = spec.aq
    if aq.kind != "none":
        exposure = series.values(aq.pollutant)
        if aq.kind == "dlm":
            block = dlm_block(exposure, aq.lags, name=aq.pollutant)
            blocks.append(("aq", block.columns[rows], block.labels))
        elif aq.kind == "mean":
            block = mean_term(exposure, aq.lags, name=aq.pollutant)
            blocks.append(("aq", block.columns[rows], block.labels))
        elif aq.kind == "nonlinear":
            lead = nonlinear_lead(exposure, aq.lags, aq.df3, rows=rows, name=aq.pollutant)
            spline = lead.spline.columns[rows]
            columns = np.column_stack([spline - spline.mean(axis=0), lead.deviations[rows]])
            blocks.append(("aq", columns, lead.labels))
            components["aq"] = lead
        else:
            cb = cross_basis(exposure, aq.max_lag, aq.lag_df, reference=REFERENCES.get(aq.pollutant),
                             name=aq.pollutant)
            blocks.append(("aq", cb.columns[rows], cb.labels))
            components["aq"] = cb

    # Column ranges per term
    terms, labels, position = {}, [], 0
    for name, columns, names in blocks:
        width = columns.shape[1]
        terms[name] = (position, position + width)
        labels.extend(names)
        position += width

    design = glm.DesignMatrix(
        y=series.values(spec.outcome)[rows],
        X=np.column_stack([columns for _, columns, _ in blocks]),
        labels=tuple(labels),
        terms=terms,
        rows=rows,
        dates=series.dates[rows].to_numpy(),
        components=components,
    )
    logger.debug(f"Assembled {series.basin}/{spec.outcome}: {design.n} rows x {design.p} columns")
    return design


def fit_spec(series, spec, **fit_options):
    """Assemble and fit in one step"""
    design = assemble(series, spec)
    return design, glm.fit(design, **fit_options)


def met_significance_table(series, spec):
    """Drop-term F test for each meteorology term of a model without pollutant"""
    if spec.aq.kind != "none":
        raise DesignError("meteorology drop tests use the model without a pollutant term")

    design, full = fit_spec(series, spec)
    rows = []
    for term in spec.met:
        reduced = glm.fit(design.drop(term.name))
        test = glm.drop_term_test(full, reduced)
        rows.append({
            "variable": MET_NAMES[term.variable],
            "lags": FORM_LABELS[term.form],
            "term": term.name,
            "F": test.f_statistic,
            "df_num": test.df_num,
            "df_den": test.df_den,
            "p_value": test.p_value,
        })
    table = pd.DataFrame(rows)
    table["dispersion"] = full.dispersion
    table["n"] = full.n
    logger.info(f"Meteorology drop tests for {series.basin}: dispersion {full.dispersion:.3f}")
    return table


def _sweep_cell(job):
    series, spec, lags, rh = job
    design, result = fit_spec(series, spec)
    report = glm.coefficient_report(result, "aq", scale=EXPOSURE_SCALE)
    return {
        "lags": lags,
        "rh": "yes" if rh else "no",
        "estimate": report.estimate,
        "se": report.se,
        "t": report.t,
        "p_value": report.p_value,
        "dispersion": result.dispersion,
        "n": result.n,
    }


def lag_sweep(series, spec, pollutant, lag_sets, rh_toggle=(True,), jobs=1, progress=False):
    """Coefficient report of a linear DLM for every (lag set, RH flag) cell

    ``lag_sets`` entries are LagSets or their text form; ``rh_toggle`` is
    either a sequence of flags applied to every lag set, or ignored when
    ``lag_sets`` already holds (lags, rh) pairs.
    """
    cells = []
    for item in lag_sets:
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], bool):
            cells.append((item[0], item[1]))
        else:
            cells.extend((item, rh) for rh in rh_toggle)

    jobs_list = []
    for lags, rh in cells:
        lag_set = lags if isinstance(lags, LagSet) else LagSet.parse(lags)
        cell_spec = spec.with_aq(AqTerm(kind="dlm", pollutant=pollutant, lags=lag_set))
        if not rh:
            cell_spec = cell_spec.without_rh()
        jobs_list.append((series, cell_spec, lag_set.label, rh))

    rows = list(map_jobs(_sweep_cell, jobs_list, jobs=jobs, desc=f"{series.basin} lag sweep", progress=progress))
    return pd.DataFrame(rows)


def _basin_estimate(job):
    series, spec = job
    _, result = fit_spec(series, spec)
    index = result.terms["aq"][0]
    return EffectEstimate(
        basin=series.basin,
        theta=float(result.beta[index]),
        variance=float(result.cov[index, index]),
    ), result.dispersion


def combined_table(series_by_basin, spec, rows=COMBINED_ROWS, jobs=1, progress=False):
    """Pool the lead DLM coefficient of each basin for every (pollutant, lags) row"""
    basins = list(series_by_basin)
    table, details = [], []
    for pollutant, lags in rows:
        lag_set = lags if isinstance(lags, LagSet) else LagSet.parse(lags)
        row_spec = spec.with_aq(AqTerm(kind="dlm", pollutant=pollutant, lags=lag_set))
        jobs_list = [(series_by_basin[basin], row_spec) for basin in basins]
        fitted = list(map_jobs(_basin_estimate, jobs_list, jobs=jobs, desc=f"{pollutant} {lag_set.label}",
                               progress=progress))
        estimates = [estimate for estimate, _ in fitted]
        pooled = pool(estimates)

        growth = np.exp(EXPOSURE_SCALE * pooled.theta_hat)
        table.append({
            "variable": row_spec.aq.pollutant,
            "lags": lag_set.label,
            "estimate": 100.0 * (growth - 1.0),
            "se": 100.0 * growth * EXPOSURE_SCALE * pooled.se,
            "t": pooled.z,
            "p_value": pooled.p_value,
            "sigma2": pooled.sigma2,
            "n_basins": len(estimates),
            "method": pooled.method,
        })
        for estimate, dispersion in fitted:
            details.append({
                "variable": row_spec.aq.pollutant,
                "lags": lag_set.label,
                "basin": estimate.basin,
                "theta": estimate.theta,
                "variance": estimate.variance,
                "dispersion": dispersion,
            })

    frame = pd.DataFrame(table)
    frame.attrs["per_basin"] = details
    return frame


def nonlinear_curve(series, spec, pollutant, lags=LagSet((0, 1, 2, 3)), df3=DEFAULT_DF3, grid=None, ref=None):
    """Relative-risk curve of the spline-in-mean pollutant term for one basin"""
    pollutant = resolve_field(pollutant)
    cell_spec = spec.with_aq(AqTerm(kind="nonlinear", pollutant=pollutant, lags=lags, df3=df3))
    design, result = fit_spec(series, cell_spec)
    lead = design.components["aq"]
    if grid is None:
        mean = dlm_block(series.values(pollutant), lead.lags).columns[design.rows, 0]
        grid = np.linspace(np.min(mean), np.max(mean), 101)
    ref = NONLINEAR_REFERENCES.get(pollutant) if ref is None else ref
    curve = risk_curve(result, lead, grid, ref)
    curve.insert(0, "basin", series.basin)
    return curve


def dlnm_model_spec(outcome, pollutant, max_lag=DEFAULT_MAX_LAG, lag_df=DEFAULT_LAG_DF, met_df=4,
                    time_df_day=8, time_df_year=4):
    """Pollutant cross-basis + thin plate weather + thin plate time model"""
    return ModelSpec(
        outcome=outcome,
        met=default_met(met_df, met_df, kind="tprs"),
        dow=False,
        aq=AqTerm(kind="crossbasis", pollutant=pollutant, max_lag=max_lag, lag_df=lag_df),
        time="tprs",
        time_df_day=time_df_day,
        time_df_year=time_df_year,
    )


def _curve_job(job):
    series, spec, grid, ref = job
    design, result = fit_spec(series, spec)
    cb = design.components["aq"]
    return series.basin, cumulative_effect(result, cb, grid, ref)


def default_grid(series_by_basin, pollutant, step=1.0):
    """Shared exposure grid from 0 to the 99th percentile over all basins"""
    values = np.concatenate([series.values(pollutant) for series in series_by_basin.values()])
    top = np.nanpercentile(values, 99)
    return np.arange(0.0, math.ceil(top / step) * step + step / 2, step)


def dlnm_curves(series_by_basin, spec, grid=None, ref=None, jobs=1, progress=False):
    """Per-basin cumulative curves of a cross-basis model and their pointwise pool"""
    pollutant = spec.aq.pollutant
    grid = default_grid(series_by_basin, pollutant) if grid is None else np.asarray(grid, dtype=float)
    ref = REFERENCES.get(pollutant) if ref is None else ref
    jobs_list = [(series, spec, grid, ref) for series in series_by_basin.values()]
    curves = dict(map_jobs(_curve_job, jobs_list, jobs=jobs, desc=f"{pollutant} curves", progress=progress))
    pooled = pooled_curve(curves, grid) if len(curves) >= 2 else None
    return curves, pooled
