#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Prediction Grid
Factorial leave-one-year-out prediction experiment. Every combination of a
pollutant level and three meteorology levels is fitted with each year held
out; the hold-out year is predicted and scored by its mean squared prediction
error relative to the model with only the time terms.
"""

import logging
import os
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import pandas as pd

from core import glm
from core.dataset import DEATH_FIELDS
from core.dlm import DEFAULT_LAG_DF, DEFAULT_MAX_LAG, LagSet
from core.exceptions import AnalysisError, ConvergenceError
from core.tsreg import AqTerm, MetTerm, ModelSpec, assemble
from utils.worker_pool import map_jobs

logger = logging.getLogger(__name__)

AQ_LEVELS = (
    "none",
    "ozone:day0",
    "ozone:mean01",
    "ozone:dlnm",
    "pm25:day0",
    "pm25:mean01",
    "pm25:dlnm",
)
MET_LEVELS = ("none", "day0", "day0+mean123")
GROUPS = {"ozone": (0, 1, 2, 3), "pm25": (0, 4, 5, 6)}

RESULT_COLUMNS = (
    "basin", "outcome", "year", "model_id", "aq", "rh", "tmax", "tmin",
    "n_train", "n_test", "mspe", "ratio", "converged",
)
PREDICTION_COLUMNS = ("basin", "outcome", "year", "model_id", "date", "observed", "predicted")
KEY_COLUMNS = ("basin", "outcome", "year", "model_id")

TIME_ONLY_ID = "M000"


@dataclass(frozen=True)
class GridSpec:
    ozone: str = "o3max8"
    pm: str = "pm25"
    met_df: int = 4
    time_df_day: int = 8
    time_df_year: int = 4
    max_lag: int = DEFAULT_MAX_LAG
    lag_df: int = DEFAULT_LAG_DF
    skip_years: tuple = (2000,)

    @property
    def pollutants(self):
        return {"ozone": self.ozone, "pm25": self.pm}


@dataclass(frozen=True)
class GridModel:
    """One cell of the factorial grid: level indices plus its model id"""

    aq: int
    rh: int
    tmax: int
    tmin: int

    @property
    def index(self):
        return ((self.aq * 3 + self.rh) * 3 + self.tmax) * 3 + self.tmin

    @property
    def model_id(self):
        return f"M{self.index:03d}"

    @property
    def is_time_only(self):
        return self.index == 0

    @property
    def groups(self):
        return tuple(name for name, levels in GROUPS.items() if self.aq in levels)

    def spec(self, outcome, grid=GridSpec()):
        """ModelSpec of this cell for one outcome"""
        met = []
        for variable, level in (("tmax", self.tmax), ("tmin", self.tmin), ("rhmax", self.rh)):
            if level >= 1:
                met.append(MetTerm(variable, "current", grid.met_df, kind="tprs"))
            if level == 2:
                met.append(MetTerm(variable, "mean123", grid.met_df, kind="tprs"))
        return ModelSpec(
            outcome=outcome,
            met=tuple(met),
            dow=False,
            aq=self._aq_term(grid),
            time="tprs",
            time_df_day=grid.time_df_day,
            time_df_year=grid.time_df_year,
        )

    def _aq_term(self, grid):
        level = AQ_LEVELS[self.aq]
        if level == "none":
            return AqTerm()
        group, form = level.split(":")
        pollutant = grid.pollutants[group]
        if form == "day0":
            return AqTerm(kind="mean", pollutant=pollutant, lags=LagSet((0,)))
        if form == "mean01":
            return AqTerm(kind="mean", pollutant=pollutant, lags=LagSet((0, 1)))
        return AqTerm(kind="crossbasis", pollutant=pollutant, max_lag=grid.max_lag, lag_df=grid.lag_df)

    def levels(self):
        return {
            "aq": AQ_LEVELS[self.aq],
            "rh": MET_LEVELS[self.rh],
            "tmax": MET_LEVELS[self.tmax],
            "tmin": MET_LEVELS[self.tmin],
        }


def enumerate_grid(grid=GridSpec()):
    """All 7 x 3 x 3 x 3 cells in model-id order; M000 is the time-only model"""
    met = range(len(MET_LEVELS))
    return [GridModel(aq, rh, tmax, tmin) for aq, rh, tmax, tmin in product(range(len(AQ_LEVELS)), met, met, met)]


def partition(models, group):
    """Cells belonging to the ozone or the PM2.5 comparison group"""
    if group not in GROUPS:
        raise ValueError(f"unknown group '{group}', expected one of {tuple(GROUPS)}")
    return [model for model in models if model.aq in GROUPS[group]]


def grid_counts(grid=GridSpec(), years=13, outcomes=len(DEATH_FIELDS), basins=8):
    """Fit counts of the full experiment"""
    models = enumerate_grid(grid)
    ozone, pm = partition(models, "ozone"), partition(models, "pm25")
    shared = {m.model_id for m in ozone} & {m.model_id for m in pm}
    per_basin = len(models) * years * outcomes
    return {
        "per_cell": len(models),
        "per_group": {"ozone": len(ozone), "pm25": len(pm)},
        "shared": len(shared),
        "per_basin": per_basin,
        "total": per_basin * basins,
    }


@dataclass
class CvResult:
    basin: str
    outcome: str
    year: int
    model: GridModel
    n_train: int = 0
    n_test: int = 0
    n_unpredictable: int = 0
    mspe: float = np.nan
    ratio: float = np.nan
    converged: bool = False
    deviance: float = np.nan
    error: str = ""
    predictions: pd.DataFrame = field(default=None, repr=False)

    @property
    def model_id(self):
        return self.model.model_id

    def to_row(self):
        levels = self.model.levels()
        return {
            "basin": self.basin,
            "outcome": self.outcome,
            "year": int(self.year),
            "model_id": self.model_id,
            "aq": levels["aq"],
            "rh": levels["rh"],
            "tmax": levels["tmax"],
            "tmin": levels["tmin"],
            "n_train": int(self.n_train),
            "n_test": int(self.n_test),
            "mspe": float(self.mspe),
            "ratio": float(self.ratio),
            "converged": bool(self.converged),
        }


def loyo_fit_predict(series, model, hold_out, outcome="ac6574", grid=GridSpec(), reference=None, design=None,
                     keep_predictions=False):
    """Fit ``model`` without year ``hold_out`` and score its predictions of that year

    ``reference`` holds the time-only model's hold-out predictions for every
    day of the series (NaN where it has none); the ratio compares both models
    on the days this model can predict. ``design`` may be passed in when the
    full-data design has already been assembled.
    """
    result = CvResult(basin=series.basin, outcome=outcome, year=int(hold_out), model=model)
    if hold_out not in set(series.years.tolist()):
        raise ValueError(f"hold-out year {hold_out} outside the series")

    observed_days = ~np.isnan(series.values(outcome)) & (series.years == hold_out)
    try:
        if design is None:
            design = assemble(series, model.spec(outcome, grid))
        in_year = series.years[design.rows] == hold_out
        train = design.subset_rows(~in_year)
        result.n_train = train.n
        result.n_test = int(in_year.sum())
        result.n_unpredictable = int(observed_days.sum()) - result.n_test
        if result.n_test == 0:
            result.error = "no predictable days in hold-out year"
            return result
        fitted = glm.fit(train)
    except ConvergenceError as e:
        result.error = str(e)
        logger.warning(f"{series.basin}/{outcome}/{hold_out}/{model.model_id}: {e}")
        return result
    except AnalysisError as e:
        result.error = str(e)
        logger.warning(f"{series.basin}/{outcome}/{hold_out}/{model.model_id} failed: {e}")
        return result

    rows = design.rows[in_year]
    y = design.y[in_year]
    predicted = fitted.predict(design.X[in_year])
    result.converged = fitted.converged
    result.deviance = fitted.deviance
    result.mspe = float(np.mean((y - predicted) ** 2))

    if model.is_time_only and reference is None:
        result.ratio = 1.0
    elif reference is not None:
        baseline = reference[rows]
        if np.any(np.isnan(baseline)):
            result.error = "time-only predictions missing for hold-out days"
        else:
            denominator = float(np.mean((y - baseline) ** 2))
            result.ratio = result.mspe / denominator if denominator > 0 else np.nan

    if keep_predictions or model.is_time_only:
        result.predictions = pd.DataFrame({
            "position": rows,
            "date": series.dates[rows].strftime("%Y-%m-%d"),
            "observed": y,
            "predicted": predicted,
        })
    return result


def run_model(job):
    """Worker: all hold-out years of one (basin, outcome, model)"""
    series, outcome, model, grid, years, reference, keep_predictions = job
    try:
        design = assemble(series, model.spec(outcome, grid))
    except AnalysisError as e:
        logger.warning(f"{series.basin}/{outcome}/{model.model_id} cannot be assembled: {e}")
        return [CvResult(basin=series.basin, outcome=outcome, year=int(year), model=model, error=str(e))
                for year in years]
    return [
        loyo_fit_predict(series, model, year, outcome=outcome, grid=grid, reference=reference, design=design,
                         keep_predictions=keep_predictions)
        for year in years
    ]


def time_only_reference(results, length):
    """Per-day hold-out predictions of the time-only model"""
    reference = np.full(length, np.nan)
    for result in results:
        if result.predictions is not None and result.converged:
            reference[result.predictions["position"].to_numpy()] = result.predictions["predicted"].to_numpy()
    return reference


def _prediction_rows(result):
    frame = result.predictions.drop(columns="position")
    frame.insert(0, "model_id", result.model_id)
    frame.insert(0, "year", result.year)
    frame.insert(0, "outcome", result.outcome)
    frame.insert(0, "basin", result.basin)
    return frame


class GridRunner:
    """Runs the grid with a resumable append-only checkpoint

    Completed (basin, outcome, year, model) rows found in the checkpoint are
    not refitted. The time-only model is always refitted since its per-day
    predictions are needed for every ratio.
    """

    def __init__(self, grid=GridSpec(), checkpoint=None, jobs=1, progress=True, keep_predictions=False, models=None):
        self.grid = grid
        self.checkpoint = checkpoint
        self.jobs = jobs
        self.progress = progress
        self.keep_predictions = keep_predictions
        # time-only model always runs first
        chosen = enumerate_grid(grid) if models is None else list(models)
        self.models = [GridModel(0, 0, 0, 0)] + [m for m in chosen if not m.is_time_only]
        self.predictions = []

    def _load_checkpoint(self):
        if not self.checkpoint or not os.path.exists(self.checkpoint):
            return pd.DataFrame(columns=list(RESULT_COLUMNS))
        done = pd.read_csv(self.checkpoint, dtype={"basin": str, "outcome": str, "model_id": str})
        logger.info(f"Resuming from {self.checkpoint}: {len(done)} results already present")
        return done

    def _append(self, results):
        if self.checkpoint:
            frame = pd.DataFrame([r.to_row() for r in results], columns=list(RESULT_COLUMNS))
            header = not os.path.exists(self.checkpoint)
            frame.to_csv(self.checkpoint, mode="a", header=header, index=False)
        if self.keep_predictions:
            self.predictions.extend(_prediction_rows(r) for r in results if r.predictions is not None)

    def hold_out_years(self, series):
        return [int(year) for year in np.unique(series.years) if int(year) not in self.grid.skip_years]

    def run(self, series_by_basin, outcomes=DEATH_FIELDS):
        """Fit the grid for every basin and outcome; returns (results, unpredictable counts)"""
        done = self._load_checkpoint()
        finished = set(done[list(KEY_COLUMNS)].itertuples(index=False, name=None)) if len(done) else set()
        rows = done.to_dict("records") if len(done) else []
        unpredictable = {}

        for basin, series in series_by_basin.items():
            years = self.hold_out_years(series)
            for outcome in outcomes:
                # Time-only fits first: their per-day predictions are the ratio denominators
                time_only = run_model((series, outcome, self.models[0], self.grid, years, None,
                                       self.keep_predictions))
                reference = time_only_reference(time_only, len(series))
                fresh = [r for r in time_only if (basin, outcome, r.year, TIME_ONLY_ID) not in finished]
                self._append(fresh)
                rows.extend(r.to_row() for r in fresh)
                counts = {str(r.year): r.n_unpredictable for r in time_only}

                # Only (model, year) pairs missing from the checkpoint are queued
                jobs = []
                for model in self.models[1:]:
                    pending = [year for year in years if (basin, outcome, year, model.model_id) not in finished]
                    if pending:
                        jobs.append((series, outcome, model, self.grid, pending, reference, self.keep_predictions))

                desc = f"{basin}/{outcome}"
                for results in map_jobs(run_model, jobs, jobs=self.jobs, desc=desc, progress=self.progress):
                    self._append(results)
                    rows.extend(r.to_row() for r in results)
                    for r in results:
                        key = f"{r.year}:{r.model_id}"
                        if r.n_unpredictable:
                            counts[key] = r.n_unpredictable
                unpredictable[f"{basin}/{outcome}"] = counts
                logger.info(f"Finished {desc}: {len(jobs)} models x {len(years)} hold-out years")

        # Checkpointed and fresh rows in key order
        frame = pd.DataFrame(rows, columns=list(RESULT_COLUMNS))
        frame = frame.sort_values(list(KEY_COLUMNS), kind="mergesort").reset_index(drop=True)
        return frame, unpredictable

    def prediction_frame(self):
        if not self.predictions:
            return pd.DataFrame(columns=list(PREDICTION_COLUMNS))
        frame = pd.concat(self.predictions, ignore_index=True)
        return frame.sort_values(list(KEY_COLUMNS) + ["date"], kind="mergesort").reset_index(drop=True)


def boxplot_stats(values):
    """Quartiles and Tukey whiskers of a set of ratios"""
    values = np.sort(np.asarray(values, dtype=float))
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return {
        "n": int(len(values)),
        "min": float(values[0]),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(values[-1]),
        "whisker_lo": float(inside.min()),
        "whisker_hi": float(inside.max()),
        "outliers": int(len(values) - len(inside)),
    }


def summarize(results, skip_years=(2000,)):
    """Boxplot data per comparison group, best model per year and its consistency

    Failed fits and the skipped hold-out years are left out.
    """
    frame = results if isinstance(results, pd.DataFrame) else pd.DataFrame([r.to_row() for r in results])
    usable = frame[frame["converged"].astype(bool) & np.isfinite(frame["ratio"]) & ~frame["year"].isin(skip_years)]
    model_aq = {m.model_id: m.aq for m in enumerate_grid()}

    boxes = []
    for (basin, outcome, year), cell in usable.groupby(["basin", "outcome", "year"], sort=True):
        aq = cell["model_id"].map(model_aq)
        for group, levels in GROUPS.items():
            ratios = cell.loc[aq.isin(levels), "ratio"]
            if len(ratios):
                boxes.append({"basin": basin, "outcome": outcome, "year": int(year), "group": group,
                              **boxplot_stats(ratios)})

    best = []
    for (basin, outcome, year), cell in usable.groupby(["basin", "outcome", "year"], sort=True):
        cell = cell.sort_values(["ratio", "model_id"], kind="mergesort")
        top = cell.iloc[0]
        best.append({"basin": basin, "outcome": outcome, "year": int(year), "model_id": top["model_id"],
                     "ratio": float(top["ratio"])})
    best = pd.DataFrame(best, columns=["basin", "outcome", "year", "model_id", "ratio"])

    consistency = []
    for (basin, outcome), cell in best.groupby(["basin", "outcome"], sort=True):
        counts = cell["model_id"].value_counts()
        top = sorted(counts.index[counts == counts.max()])[0]
        consistency.append({"basin": basin, "outcome": outcome, "model_id": top, "years_best": int(counts.max()),
                            "n_years": int(len(cell)), "distinct_best": int(len(counts))})

    return {
        "boxplots": pd.DataFrame(boxes),
        "best": best,
        "consistency": pd.DataFrame(consistency),
        "excluded": int(len(frame) - len(usable)),
    }
