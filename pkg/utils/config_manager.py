#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Configuration Manager
Handles run configuration: built-in defaults, an optional JSON config file
and command-line overrides
"""

import copy
import json
import logging
import os

from core.dataset import OUTCOMES, STUDY_BASINS, STUDY_END, STUDY_START, resolve_field
from core.exceptions import ConfigError, UnknownFieldError, WindowError
from core.movmed import WindowSpec
from core.tsreg import SENSITIVITY_PRESETS, TABLES

logger = logging.getLogger(__name__)

DATA_ENV = "AIRMORT_DATA"
TRACKS = ("validate", "movmed", "tsreg", "dlnm-curves", "predict-grid", "meta", "report")


class ConfigManager:
    """Manages run configuration and settings"""

    def __init__(self, config_file=None, overrides=None):
        """Initialize configuration manager

        ``overrides`` are dotted keys ("analysis.basins") from the command
        line. Where the config file sets the same key, the file wins.
        """
        self.config_file = config_file
        self.config = self._create_default_config()
        self.file_keys = set()

        if config_file:
            self._merge(self.config, self._load_config(), self.file_keys)

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key in self.file_keys:
                if self.get(key) != value:
                    logger.warning(f"Config file sets {key}={self.get(key)!r}; ignoring command-line value {value!r}")
                continue
            self.set(key, value)

    def _load_config(self):
        """Load configuration from file"""
        if not os.path.exists(self.config_file):
            raise ConfigError(f"config file not found: {self.config_file}")
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse config file {self.config_file}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        return loaded

    def _merge(self, target, source, seen, prefix=""):
        for key, value in source.items():
            dotted = f"{prefix}{key}"
            if prefix == "" and key not in target:
                raise ConfigError(f"unknown config section '{key}'")
            if isinstance(value, dict) and isinstance(target.get(key), dict) and key != "schema":
                self._merge(target[key], value, seen, prefix=f"{dotted}.")
            else:
                if prefix and key not in target:
                    raise ConfigError(f"unknown config key '{dotted}'")
                target[key] = value
                seen.add(dotted)

    def _create_default_config(self):
        """Create and return default configuration"""
        return {
            "data": {
                "path": os.environ.get(DATA_ENV, ""),
                "url": "",
                "start": STUDY_START.isoformat(),
                "end": STUDY_END.isoformat(),
                "schema": None,
                "ozone_metric": "o3max8",
            },
            "analysis": {
                "track": "validate",
                "basins": list(STUDY_BASINS),
                "outcome": "ac65p",
                "outcomes": ["ac6574", "ac75p", "hl6574", "hl75p"],
                "df0": 7,
                "df1": 6,
                "df2": 6,
                "df3": 6,
                "window": "21-5",
                "movmed_lags": [0, 1, 2],
                "tables": [1, 2, 3, 4, 5, 6, 7],
                "sensitivity": None,
                "rh_omitted": False,
                "max_lag": 6,
                "lag_df": 4,
                "met_df": 4,
                "time_df_day": 8,
                "time_df_year": 4,
                "reference": None,
                "estimates": None,
                "skip_years": [2000],
                "dump_basis": False,
                "predictions": False,
            },
            "run": {
                "output_dir": "airmort-output",
                "jobs": 1,
                "dry_run": False,
                "progress": True,
            },
        }

    def to_dict(self):
        return copy.deepcopy(self.config)

    def get(self, dotted, default=None):
        section, _, key = dotted.partition(".")
        return self.config.get(section, {}).get(key, default)

    def set(self, dotted, value):
        section, _, key = dotted.partition(".")
        if section not in self.config or key not in self.config[section]:
            raise ConfigError(f"unknown config key '{dotted}'")
        self.config[section][key] = value

    def get_data_settings(self):
        """Get dataset settings"""
        return self.config["data"]

    def get_analysis_settings(self):
        """Get analysis settings"""
        return self.config["analysis"]

    def get_run_settings(self):
        """Get run settings"""
        return self.config["run"]

    def get_output_dir(self):
        """Get output directory path"""
        return self.config["run"]["output_dir"]

    def get_track(self):
        return self.config["analysis"]["track"]

    def validate(self):
        """Check every option before any fitting; raises ConfigError"""
        data, analysis, run = self.config["data"], self.config["analysis"], self.config["run"]

        if analysis["track"] not in TRACKS:
            raise ConfigError(f"unknown track '{analysis['track']}', expected one of {TRACKS}")
        if not data["path"] and not data["url"]:
            raise ConfigError(f"no dataset path given (use --data or set {DATA_ENV})")
        if data["start"] > data["end"]:
            raise ConfigError("data.start is after data.end")

        try:
            for name in [data["ozone_metric"], analysis["outcome"], *analysis["outcomes"]]:
                resolve_field(name)
        except UnknownFieldError as e:
            raise ConfigError(str(e)) from e
        if resolve_field(data["ozone_metric"]) not in ("o3max8", "o3avg"):
            raise ConfigError("ozone_metric must be o3max8 or o3avg")
        for name in [analysis["outcome"], *analysis["outcomes"]]:
            if resolve_field(name) not in OUTCOMES:
                raise ConfigError(f"'{name}' is not a death outcome")

        if not analysis["basins"]:
            raise ConfigError("at least one basin is required")
        if not 1 <= analysis["df0"] <= 20:
            raise ConfigError("df0 must be in [1, 20]")
        for key in ("df1", "df2", "met_df"):
            if not 1 <= analysis[key] <= 10:
                raise ConfigError(f"{key} must be in [1, 10]")
        for key in ("df3", "lag_df", "max_lag", "time_df_day", "time_df_year"):
            if int(analysis[key]) < 1:
                raise ConfigError(f"{key} must be a positive integer")
        if analysis["lag_df"] > analysis["max_lag"] + 1:
            raise ConfigError("lag_df cannot exceed max_lag + 1")
        try:
            WindowSpec.parse(analysis["window"])
        except WindowError as e:
            raise ConfigError(f"bad window '{analysis['window']}': {e}") from e
        unknown = [t for t in analysis["tables"] if int(t) not in TABLES]
        if unknown:
            raise ConfigError(f"unknown table numbers {unknown}")
        if analysis["sensitivity"] is not None and analysis["sensitivity"] not in SENSITIVITY_PRESETS:
            raise ConfigError(f"unknown sensitivity preset '{analysis['sensitivity']}'")

        if int(run["jobs"]) < 1:
            raise ConfigError("jobs must be at least 1")
        output_dir = run["output_dir"]
        try:
            os.makedirs(output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {output_dir}: {e}") from e
        if not os.access(output_dir, os.W_OK):
            raise ConfigError(f"output directory {output_dir} is not writable")
        logger.debug(f"Configuration validated for track {analysis['track']}")
        return True
