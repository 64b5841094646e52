#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Dataset
Parses, validates and serves the basin/day keyed panel of deaths, air quality
and weather. One canonical CSV holds every basin:

    basin,date,ac6574,ac75p,hl6574,hl75p,pm25,o3avg,o3max8,tmax,tmin,rhmax

Dates are ISO formatted and an empty cell means a missing measurement. Death
counts may never be missing; calendar days may never be missing.
"""

import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np
import pandas as pd
import requests

from core.exceptions import DataValidationError, UnknownFieldError

logger = logging.getLogger(__name__)

# Death categories: all cause (accidents removed) and heart/lung, by age band
DEATH_FIELDS = ("ac6574", "ac75p", "hl6574", "hl75p")
MEASURE_FIELDS = ("pm25", "o3avg", "o3max8", "tmax", "tmin", "rhmax")
ALL_FIELDS = DEATH_FIELDS + MEASURE_FIELDS
CANONICAL_COLUMNS = ("basin", "date") + ALL_FIELDS

# 65-and-over totals are the union of the two stored age bands
DERIVED_OUTCOMES = {
    "ac65p": ("ac6574", "ac75p"),
    "hl65p": ("hl6574", "hl75p"),
}
OUTCOMES = DEATH_FIELDS + tuple(DERIVED_OUTCOMES)

FIELD_ALIASES = {
    "ozone": "o3max8",
    "pm": "pm25",
    "rh": "rhmax",
}

# Units are metadata only; nothing is converted
UNITS = {
    "pm25": "ug/m3",
    "o3avg": "ppb",
    "o3max8": "ppb",
    "tmax": "degF",
    "tmin": "degF",
    "rhmax": "percent",
}

DEFAULT_SCHEMA = {name: name for name in CANONICAL_COLUMNS}

STUDY_BASINS = ("SC", "SFB", "SJV", "SD", "SV", "SCC", "MD", "NCC")
STUDY_START = date(2000, 1, 1)
STUDY_END = date(2012, 12, 31)


def resolve_field(name):
    """Map an alias (ozone, pm, rh) or a canonical name to a canonical field id"""
    name = FIELD_ALIASES.get(name, name)
    if name not in ALL_FIELDS and name not in DERIVED_OUTCOMES:
        raise UnknownFieldError(f"unknown field '{name}'")
    return name


@dataclass(frozen=True)
class DailyRecord:
    """One day of one basin"""

    date: date
    deaths: tuple
    pm25: float = None
    o3avg: float = None
    o3max8: float = None
    tmax: float = None
    tmin: float = None
    rhmax: float = None


@dataclass(frozen=True, eq=False)
class BasinSeries:
    """Date-ordered, gap-free daily panel for one air basin

    The frame is indexed by a daily DatetimeIndex and carries every field of
    ``ALL_FIELDS``; deaths are int64 and measurements float64 with NaN for
    missing values. Instances are treated as immutable.
    """

    basin: str
    frame: pd.DataFrame

    def __post_init__(self):
        index = self.frame.index
        if not isinstance(index, pd.DatetimeIndex):
            raise DataValidationError("series index must be a DatetimeIndex", basin=self.basin)
        if len(index) == 0:
            raise DataValidationError(f"basin {self.basin} has no records", basin=self.basin)
        if index.has_duplicates:
            raise DataValidationError(f"duplicate dates in basin {self.basin}", basin=self.basin)
        steps = np.diff(index.values).astype("timedelta64[D]").astype(int)
        if np.any(steps != 1):
            first = int(np.flatnonzero(steps != 1)[0])
            raise DataValidationError(
                f"date gap in basin {self.basin} after {index[first].date().isoformat()}",
                basin=self.basin,
            )
        missing = [name for name in ALL_FIELDS if name not in self.frame.columns]
        if missing:
            raise DataValidationError(f"series lacks fields {missing}", basin=self.basin)

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, BasinSeries):
            return NotImplemented
        return self.basin == other.basin and self.frame.equals(other.frame)

    __hash__ = None

    @property
    def dates(self):
        return self.frame.index

    @property
    def start(self):
        return self.frame.index[0].date()

    @property
    def end(self):
        return self.frame.index[-1].date()

    @property
    def year_index(self):
        """Year index j = 0, 1, ... counted from the first year of the series"""
        years = self.frame.index.year.to_numpy()
        return years - years[0]

    @property
    def day_index(self):
        """Within-year day index k = 1 .. n_j"""
        return self.frame.index.dayofyear.to_numpy()

    @property
    def years(self):
        return self.frame.index.year.to_numpy()

    @property
    def time_index(self):
        """Day number counted from the first day of the series"""
        return np.arange(len(self.frame), dtype=float)

    def values(self, name):
        """Return a field as a float array (NaN where missing)"""
        name = resolve_field(name)
        if name in DERIVED_OUTCOMES:
            parts = DERIVED_OUTCOMES[name]
            return sum(self.frame[part].to_numpy(dtype=float) for part in parts)
        return self.frame[name].to_numpy(dtype=float)

    def record(self, position):
        """Return day ``position`` as a DailyRecord"""
        row = self.frame.iloc[position]
        measures = {
            name: (None if pd.isna(row[name]) else float(row[name])) for name in MEASURE_FIELDS
        }
        return DailyRecord(
            date=self.frame.index[position].date(),
            deaths=tuple(int(row[name]) for name in DEATH_FIELDS),
            **measures,
        )

    def missing_counts(self):
        """Number of missing cells per measurement field"""
        return {name: int(self.frame[name].isna().sum()) for name in MEASURE_FIELDS}


@dataclass
class ValidationReport:
    """Outcome of checking a dataset file without raising"""

    path: str
    n_rows: int = 0
    days_per_basin: dict = field(default_factory=dict)
    missing: dict = field(default_factory=dict)
    gaps: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def to_dict(self):
        return {
            "path": self.path,
            "n_rows": self.n_rows,
            "days_per_basin": dict(self.days_per_basin),
            "missing": dict(self.missing),
            "gaps": list(self.gaps),
            "errors": list(self.errors),
            "ok": self.ok,
            "units": dict(UNITS),
        }


@dataclass
class IngestResult:
    """Series per basin plus per-field missingness counts"""

    series: dict
    missing: dict

    def __getitem__(self, basin):
        return self.series[basin]

    def __iter__(self):
        return iter(self.series.values())

    def __len__(self):
        return len(self.series)

    @property
    def basins(self):
        return tuple(self.series)


def _read_raw(path, schema):
    """Read the file as strings and rename columns to canonical ids"""
    mapping = {**DEFAULT_SCHEMA, **(schema or {})}
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DataValidationError(f"unparseable file: {e}") from e
    except (OSError, pd.errors.EmptyDataError) as e:
        raise DataValidationError(f"cannot read {path}: {e}") from e

    absent = [column for column in mapping.values() if column not in raw.columns]
    if absent:
        raise DataValidationError(f"header lacks columns {absent}", line=1)

    frame = raw[[mapping[name] for name in CANONICAL_COLUMNS]].copy()
    frame.columns = list(CANONICAL_COLUMNS)
    frame = frame.fillna("")
    for column in frame.columns:
        frame[column] = frame[column].str.strip()
    # header is line 1
    frame["line"] = np.arange(len(frame)) + 2
    return frame


def _parse(frame):
    """Convert string cells to typed columns, collecting every row error"""
    errors = []

    def flag(mask, message):
        for line in frame.loc[mask, "line"]:
            errors.append((int(line), message))

    parsed = pd.DataFrame({"basin": frame["basin"], "line": frame["line"]})
    flag(parsed["basin"] == "", "empty basin key")

    dates = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    flag(dates.isna(), "unparseable date")
    parsed["date"] = dates

    for name in ALL_FIELDS:
        cells = frame[name]
        empty = cells == ""
        numbers = pd.to_numeric(cells.where(~empty), errors="coerce")
        flag(~empty & numbers.isna(), f"unparseable value in {name}")
        parsed[name] = numbers

    for name in DEATH_FIELDS:
        counts = parsed[name]
        flag(frame[name] == "", f"missing death count {name}")
        flag(counts.notna() & ((counts < 0) | (counts % 1 != 0)), f"{name} must be a non-negative integer")

    for name in ("pm25", "o3avg", "o3max8"):
        flag(parsed[name] < 0, f"{name} must be non-negative")
    flag((parsed["rhmax"] < 0) | (parsed["rhmax"] > 100), "rhmax outside [0, 100]")
    flag(parsed["tmax"] < parsed["tmin"], "tmax below tmin")

    keyed = parsed["date"].notna() & (parsed["basin"] != "")
    duplicated = keyed & parsed.duplicated(["basin", "date"], keep="first")
    flag(duplicated, "duplicate (basin, date)")

    errors.sort()
    return parsed, errors


def _find_gaps(parsed, start, end):
    """Contiguous runs of absent calendar days per basin"""
    gaps = []
    for basin, rows in parsed.groupby("basin", sort=False):
        present = pd.DatetimeIndex(rows["date"].dropna().unique()).sort_values()
        if len(present) == 0:
            continue
        lo = pd.Timestamp(start) if start is not None else present[0]
        hi = pd.Timestamp(end) if end is not None else present[-1]
        expected = pd.date_range(lo, hi, freq="D")
        absent = expected.difference(present)
        if len(absent) == 0:
            continue
        # split absent days into runs
        breaks = np.flatnonzero(np.diff(absent.values).astype("timedelta64[D]").astype(int) != 1)
        starts = np.r_[0, breaks + 1]
        stops = np.r_[breaks, len(absent) - 1]
        for i, j in zip(starts, stops):
            gaps.append({
                "basin": basin,
                "start": absent[i].date().isoformat(),
                "end": absent[j].date().isoformat(),
                "days": int(j - i + 1),
            })
    return gaps


def _build_series(basin, rows, start, end):
    """Turn the parsed rows of one basin into a BasinSeries"""
    rows = rows.sort_values("date").set_index("date")
    if start is not None or end is not None:
        lo = pd.Timestamp(start) if start is not None else rows.index[0]
        hi = pd.Timestamp(end) if end is not None else rows.index[-1]
        rows = rows.loc[lo:hi]
    frame = pd.DataFrame(index=pd.DatetimeIndex(rows.index, name="date", freq=None))
    for name in DEATH_FIELDS:
        frame[name] = rows[name].astype("int64")
    for name in MEASURE_FIELDS:
        frame[name] = rows[name].astype("float64")
    return BasinSeries(basin=basin, frame=frame)


def validate_file(path, schema=None, start=None, end=None):
    """Check a dataset file and return a ValidationReport (never raises for data errors)"""
    report = ValidationReport(path=str(path))
    try:
        frame = _read_raw(path, schema)
    except DataValidationError as e:
        report.errors.append(str(e))
        return report

    parsed, errors = _parse(frame)
    report.n_rows = len(parsed)
    report.errors.extend(f"line {line}: {message}" for line, message in errors)
    report.missing = {name: int(parsed[name].isna().sum()) for name in MEASURE_FIELDS}
    report.days_per_basin = {
        basin: int(count) for basin, count in parsed.groupby("basin", sort=False).size().items()
    }
    report.gaps = _find_gaps(parsed, start, end)
    report.errors.extend(
        f"date gap in basin {gap['basin']}: {gap['start']}..{gap['end']} ({gap['days']} days)"
        for gap in report.gaps
    )
    return report


def ingest(path, schema=None, start=None, end=None, basins=None):
    """Parse a dataset file into one BasinSeries per basin

    ``schema`` maps logical field ids to file column names; unmapped fields use
    their canonical names. ``start``/``end`` bound the calendar range (default:
    each basin's first and last date). Raises DataValidationError on the first
    unparseable row, duplicate key or date gap.
    """
    frame = _read_raw(path, schema)
    parsed, errors = _parse(frame)
    if errors:
        line, message = errors[0]
        raise DataValidationError(message, line=line)

    gaps = _find_gaps(parsed, start, end)
    if gaps:
        gap = gaps[0]
        raise DataValidationError(
            f"date gap in basin {gap['basin']}: {gap['start']}..{gap['end']}", basin=gap["basin"]
        )

    series = {}
    for basin, rows in parsed.groupby("basin", sort=False):
        if basins is not None and basin not in basins:
            continue
        series[basin] = _build_series(basin, rows, start, end)
        logger.debug(f"Ingested basin {basin}: {len(series[basin])} days")

    missing = {name: 0 for name in MEASURE_FIELDS}
    for item in series.values():
        for name, count in item.missing_counts().items():
            missing[name] += count

    logger.info(f"Ingested {len(series)} basin(s) from {path}")
    return IngestResult(series=series, missing=missing)


def write_csv(collection, path):
    """Serialize BasinSeries objects in the canonical schema (inverse of ingest)"""
    frames = []
    for item in collection:
        out = item.frame.reset_index()
        out["date"] = out["date"].dt.strftime("%Y-%m-%d")
        out.insert(0, "basin", item.basin)
        frames.append(out[list(CANONICAL_COLUMNS)])
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CANONICAL_COLUMNS)
    table.to_csv(path, index=False, na_rep="")
    return path


def fetch_dataset(url, dest, timeout=120):
    """Download the published analysis-ready CSV to ``dest``"""
    try:
        with requests.Session() as session:
            response = session.get(url, timeout=timeout)
    except requests.RequestException as e:
        raise DataValidationError(f"could not fetch {url}: {e}") from e

    if response.status_code != 200:
        raise DataValidationError(f"could not fetch {url}: HTTP {response.status_code}")

    with open(dest, "wb") as f:
        f.write(response.content)
    logger.info(f"Fetched dataset from {url} to {dest}")
    return dest


def shift(values, lag):
    """Shift an array forward by ``lag`` days; the first ``lag`` entries are missing"""
    values = np.asarray(values, dtype=float)
    lag = int(lag)
    if lag < 0:
        raise ValueError(f"lag must be non-negative, got {lag}")
    if lag > len(values):
        raise ValueError(f"lag {lag} exceeds series length {len(values)}")
    out = np.full(len(values), np.nan)
    if lag < len(values):
        out[lag:] = values[: len(values) - lag]
    return out


def lagged(series, name, lag):
    """Value of field ``name`` at day t - lag for every day t"""
    return shift(series.values(name), lag)


def lag_mean(series, name, lags):
    """Mean of field ``name`` over a lag set; missing if any lag is missing"""
    values = series.values(name)
    stacked = np.vstack([shift(values, lag) for lag in lags])
    return stacked.mean(axis=0)


def complete_rows(series, required, lags=None):
    """Indices of days where every required field is present at every required lag

    ``lags`` maps a field id to its lag set; fields without an entry use lag 0.
    """
    lags = lags or {}
    keep = np.ones(len(series), dtype=bool)
    for name in required:
        values = series.values(name)
        for lag in lags.get(name, (0,)):
            keep &= ~np.isnan(shift(values, lag))
    return np.flatnonzero(keep)
