#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Analysis Runner
Loads the dataset named by the run configuration and executes one analysis
track, handing every artifact to a single OutputWriter.
"""

import logging
import os

import numpy as np
import pandas as pd

from core import predgrid, tsreg
from core.dataset import MEASURE_FIELDS, fetch_dataset, ingest, resolve_field, validate_file
from core.exceptions import AnalysisError, ConfigError, DataValidationError
from core.meta import EffectEstimate, pool
from core.movmed import WindowSpec, deviation_frame, deviations, partial_correlations
from utils.output_writer import OutputWriter, format_table

logger = logging.getLogger(__name__)

MOVMED_FIELDS = ("deaths", "pm25", "ozone", "tmax", "tmin", "rhmax")
CHECKPOINT_NAME = "predict_grid.partial.csv"


class AnalysisRunner:
    """Runs one analysis track from a validated ConfigManager"""

    def __init__(self, config_manager):
        """Initialize runner with configuration"""
        self.config_manager = config_manager
        self.data = config_manager.get_data_settings()
        self.analysis = config_manager.get_analysis_settings()
        self.run_settings = config_manager.get_run_settings()
        self.output_dir = config_manager.get_output_dir()
        self.writer = OutputWriter(self.output_dir)
        self.jobs = int(self.run_settings["jobs"])
        self.progress = bool(self.run_settings["progress"])
        self._series = None

    @property
    def ozone(self):
        return resolve_field(self.data["ozone_metric"])

    def _pollutant(self, name):
        return self.ozone if name == "ozone" else resolve_field(name)

    def dataset_path(self):
        """Local dataset path, downloading the published file when only a URL is configured"""
        if self.data["path"]:
            return self.data["path"]
        dest = os.path.join(self.output_dir, "dataset.csv")
        if not os.path.exists(dest):
            fetch_dataset(self.data["url"], dest)
        return dest

    def load_series(self):
        """Ingest once; on data errors the validation report is written before raising"""
        if self._series is not None:
            return self._series
        path = self.dataset_path()
        try:
            result = ingest(path, schema=self.data["schema"], start=self.data["start"], end=self.data["end"],
                            basins=set(self.analysis["basins"]))
        except DataValidationError:
            self._write_validation(path)
            raise
        missing = [basin for basin in self.analysis["basins"] if basin not in result.series]
        if missing:
            logger.warning(f"Basins not present in the dataset: {missing}")
        self._series = {basin: result[basin] for basin in self.analysis["basins"] if basin in result.series}
        if not self._series:
            raise DataValidationError("none of the requested basins are in the dataset")
        return self._series

    def _write_validation(self, path):
        report = validate_file(path, schema=self.data["schema"], start=self.data["start"], end=self.data["end"])
        self.writer.write_json("validation.json", report.to_dict())
        return report

    def base_spec(self):
        a = self.analysis
        df0, df1, df2 = a["df0"], a["df1"], a["df2"]
        if a["sensitivity"] is not None:
            df0, df1, df2 = tsreg.SENSITIVITY_PRESETS[a["sensitivity"]]
        spec = tsreg.ModelSpec(outcome=a["outcome"]).with_dfs(df0, df1, df2)
        return spec.without_rh() if a["rh_omitted"] else spec

    def run(self):
        """Run the configured track; returns the manifest path"""
        track = self.config_manager.get_track()
        handler = {
            "validate": self.run_validate,
            "movmed": self.run_movmed,
            "tsreg": self.run_tsreg,
            "dlnm-curves": self.run_dlnm_curves,
            "predict-grid": self.run_predict_grid,
            "meta": self.run_meta,
            "report": self.run_report,
        }[track]
        logger.info(f"Running track {track}")
        try:
            handler()
        except AnalysisError:
            self.writer.write_manifest(track, "failed", self.config_manager.to_dict())
            raise
        return self.writer.write_manifest(track, "ok", self.config_manager.to_dict())

    # validate

    def run_validate(self):
        report = self._write_validation(self.dataset_path())
        if not report.ok:
            raise DataValidationError(f"{len(report.errors)} problem(s) in {report.path}; first: {report.errors[0]}")
        logger.info(f"Dataset valid: {report.n_rows} rows, {len(report.days_per_basin)} basin(s)")
        return report

    # movmed

    def _movmed_values(self, series, name):
        if name == "deaths":
            return series.values(self.analysis["outcome"])
        return series.values(self._pollutant(name))

    def run_movmed(self):
        spec = WindowSpec.parse(self.analysis["window"])
        for basin, series in self.load_series().items():
            devs = pd.DataFrame({
                name: deviations(self._movmed_values(series, name), spec, source=name).values
                for name in MOVMED_FIELDS
            })
            series_frame = devs.add_prefix("dev_")
            series_frame.insert(0, "date", series.dates.strftime("%Y-%m-%d"))
            self.writer.write_csv(f"movmed/{basin}_deviations.csv", series_frame)

            complete = devs.dropna()
            self.writer.write_csv(f"movmed/{basin}_correlations.csv",
                                  complete.corr().reset_index().rename(columns={"index": "variable"}))
            partial = partial_correlations(complete)
            self.writer.write_csv(f"movmed/{basin}_partial.csv",
                                  partial.reset_index().rename(columns={"index": "variable"}))

            scatter = []
            for x_field in ("ozone", "pm25", "tmax", "tmin"):
                for lag in self.analysis["movmed_lags"]:
                    frame = deviation_frame(series, self._pollutant(x_field), self.analysis["outcome"], spec, lag)
                    frame = frame.rename(columns={f"dev_{self._pollutant(x_field)}": "dev_x",
                                                  f"dev_{resolve_field(self.analysis['outcome'])}": "dev_y"})
                    frame.insert(0, "x", x_field)
                    if "spike" not in frame:
                        frame["spike"] = 0
                    scatter.append(frame)
            self.writer.write_csv(f"movmed/{basin}_scatter.csv", pd.concat(scatter, ignore_index=True))
            logger.info(f"Moving-median deviations for {basin}: {len(complete)} complete days")

    # tsreg

    def table(self, number, series_by_basin, spec):
        """Compute one of the preset tables"""
        preset = tsreg.TABLES[number]
        if preset["kind"] == "combined":
            rows = [(self._pollutant(p), lags) for p, lags in tsreg.COMBINED_ROWS]
            return tsreg.combined_table(series_by_basin, spec, rows=rows, jobs=self.jobs, progress=self.progress)

        basin = preset["basin"]
        if basin not in series_by_basin:
            logger.warning(f"Table {number} needs basin {basin}, which is not loaded; skipped")
            return None
        series = series_by_basin[basin]
        if preset["kind"] == "met":
            return tsreg.met_significance_table(series, spec)
        return tsreg.lag_sweep(series, spec, self._pollutant(preset["pollutant"]), preset["cells"],
                               jobs=self.jobs, progress=self.progress)

    def run_tsreg(self):
        series_by_basin = self.load_series()
        spec = self.base_spec()
        tables = {}
        for number in sorted(int(t) for t in self.analysis["tables"]):
            table = self.table(number, series_by_basin, spec)
            if table is None:
                continue
            tables[number] = table
            self.writer.write_csv(f"table{number}.csv", table)
            self.writer.write_text(f"table{number}.txt", format_table(table, title=f"Table {number}"))
            if number == 7:
                self.writer.write_csv("table7_per_basin.csv", pd.DataFrame(table.attrs["per_basin"]))

        if self.analysis["dump_basis"]:
            for basin, series in series_by_basin.items():
                design = tsreg.assemble(series, spec)
                frame = pd.DataFrame(design.X, columns=list(design.labels))
                frame.insert(0, "date", pd.DatetimeIndex(design.dates).strftime("%Y-%m-%d"))
                self.writer.write_csv(f"basis/{basin}_design.csv", frame)
        return tables

    # dlnm-curves

    def run_dlnm_curves(self):
        series_by_basin = self.load_series()
        a = self.analysis
        for pollutant in (self.ozone, "pm25"):
            for outcome in a["outcomes"]:
                spec = tsreg.dlnm_model_spec(outcome, pollutant, max_lag=a["max_lag"], lag_df=a["lag_df"],
                                             met_df=a["met_df"], time_df_day=a["time_df_day"],
                                             time_df_year=a["time_df_year"])
                curves, pooled = tsreg.dlnm_curves(series_by_basin, spec, ref=a["reference"], jobs=self.jobs,
                                                   progress=self.progress)
                frames = [curve.frame.assign(basin=basin) for basin, curve in curves.items()]
                if pooled is not None:
                    frames.append(pooled.drop(columns="sigma2").assign(basin="pooled"))
                frame = pd.concat(frames, ignore_index=True)
                self.writer.write_csv(f"curves/{pollutant}_{outcome}.csv",
                                      frame[["basin"] + [c for c in frame.columns if c != "basin"]])

            nonlinear = []
            base = self.base_spec()
            for basin, series in series_by_basin.items():
                try:
                    nonlinear.append(tsreg.nonlinear_curve(series, base, pollutant, df3=a["df3"]))
                except AnalysisError as e:
                    logger.warning(f"Nonlinear curve for {basin}/{pollutant} failed: {e}")
            if nonlinear:
                self.writer.write_csv(f"curves/{pollutant}_nonlinear.csv", pd.concat(nonlinear, ignore_index=True))

    # predict-grid

    def grid_spec(self):
        a = self.analysis
        return predgrid.GridSpec(ozone=self.ozone, met_df=a["met_df"], time_df_day=a["time_df_day"],
                                 time_df_year=a["time_df_year"], max_lag=a["max_lag"], lag_df=a["lag_df"],
                                 skip_years=tuple(a["skip_years"]))

    def run_predict_grid(self):
        grid = self.grid_spec()
        outcomes = [resolve_field(o) for o in self.analysis["outcomes"]]

        if self.run_settings["dry_run"]:
            start, end = pd.Timestamp(self.data["start"]).year, pd.Timestamp(self.data["end"]).year
            years = end - start + 1
            usable = len([y for y in range(start, end + 1) if y not in grid.skip_years])
            plan = {
                "study": predgrid.grid_counts(grid, years=years, outcomes=len(outcomes),
                                              basins=len(self.analysis["basins"])),
                "this_run": {
                    "basins": list(self.analysis["basins"]),
                    "outcomes": outcomes,
                    "hold_out_years": usable,
                    "fits": len(predgrid.enumerate_grid(grid)) * usable * len(outcomes)
                            * len(self.analysis["basins"]),
                },
            }
            self.writer.write_json("predict_grid_plan.json", plan)
            logger.info(f"Fit plan: {plan['this_run']['fits']} fits")
            return plan

        checkpoint = self.writer.path(CHECKPOINT_NAME)
        runner = predgrid.GridRunner(grid, checkpoint=checkpoint, jobs=self.jobs, progress=self.progress,
                                     keep_predictions=self.analysis["predictions"])
        results, unpredictable = runner.run(self.load_series(), outcomes)
        self.writer.write_csv("predict_grid_results.csv", results)

        summary = predgrid.summarize(results, skip_years=grid.skip_years)
        self.writer.write_csv("predict_grid_boxplots.csv", summary["boxplots"])
        self.writer.write_csv("predict_grid_best.csv", summary["best"])
        per_cell = {}
        for (basin, outcome), cell in results.groupby(["basin", "outcome"], sort=True):
            key = f"{basin}/{outcome}"
            consistency = summary["consistency"]
            match = consistency[(consistency["basin"] == basin) & (consistency["outcome"] == outcome)] \
                if len(consistency) else consistency
            per_cell[key] = {
                "fits": int(len(cell)),
                "failed": int((~cell["converged"].astype(bool)).sum()),
                "unpredictable_days": unpredictable.get(key, {}),
                "consistency": match.to_dict("records"),
            }
        self.writer.write_json("predict_grid_summary.json", {"cells": per_cell, "excluded": summary["excluded"]})
        if self.analysis["predictions"]:
            self.writer.write_csv("predict_grid_predictions.csv", runner.prediction_frame())
        os.remove(checkpoint)
        return results

    # meta

    def run_meta(self):
        path = self.analysis["estimates"]
        if not path:
            table = self.table(7, self.load_series(), self.base_spec())
            self.writer.write_csv("table7.csv", table)
            self.writer.write_text("table7.txt", format_table(table, title="Table 7"))
            return table

        try:
            frame = pd.read_csv(path, dtype={"basin": str})
        except (OSError, pd.errors.ParserError) as e:
            raise ConfigError(f"cannot read estimates file {path}: {e}") from e
        absent = {"basin", "theta", "variance"} - set(frame.columns)
        if absent:
            raise DataValidationError(f"estimates file lacks columns {sorted(absent)}")
        estimates = [EffectEstimate(row.basin, float(row.theta), float(row.variance))
                     for row in frame.itertuples(index=False)]
        pooled = pool(estimates)
        self.writer.write_json("meta_pooled.json", pooled.to_dict())
        logger.info(f"Pooled {len(estimates)} estimates: {pooled.theta_hat:.6g} (SE {pooled.se:.3g})")
        return pooled

    # report

    def run_report(self):
        report = self.run_validate()
        lines = [
            "Dataset",
            "=======",
            f"file: {report.path}",
            f"rows: {report.n_rows}",
        ]
        lines.extend(f"basin {basin}: {days} days" for basin, days in report.days_per_basin.items())
        lines.extend(f"missing {name}: {report.missing.get(name, 0)}" for name in MEASURE_FIELDS)
        lines.append("")

        tables = self.run_tsreg()
        for number, table in tables.items():
            lines.append(format_table(table, title=f"Table {number}"))
            if "dispersion" in table and len(table):
                lines.append(f"dispersion: {np.nanmean(table['dispersion']):.4f}")
                lines.append("")
        self.writer.write_text("report.txt", "\n".join(lines) + "\n")
