"""
Shared fixtures: synthetic basin series with known structure
"""
import numpy as np
import pandas as pd
import pytest

from core.dataset import DEATH_FIELDS, MEASURE_FIELDS, BasinSeries

# Baseline daily means of the four stored death categories
BASE_RATES = {"ac6574": 12.0, "ac75p": 40.0, "hl6574": 5.0, "hl75p": 18.0}


def make_frame(start="2000-01-01", end="2012-12-31", seed=0, ozone_beta=0.0, pm_beta=0.0, rates=None,
               seasonal=True):
    """Synthetic daily panel in the canonical column layout, rounded like the published file"""
    rng = np.random.default_rng(seed)
    dates = pd.date_range(start, end, freq="D", name="date")
    n = len(dates)
    season = np.sin(2 * np.pi * dates.dayofyear.to_numpy() / 365.25) if seasonal else np.zeros(n)

    tmax = np.round(75 + 15 * season + rng.normal(0, 5, n), 1)
    tmin = np.round(tmax - 20 - np.abs(rng.normal(0, 3, n)), 1)
    rhmax = np.round(np.clip(70 - 8 * season + rng.normal(0, 10, n), 5, 100), 1)
    o3max8 = np.round(np.clip(45 + 15 * season + rng.normal(0, 8, n), 1, None), 1)
    o3avg = np.round(0.7 * o3max8, 1)
    pm25 = np.round(np.clip(15 - 4 * season + rng.normal(0, 5, n), 1, None), 1)

    rates = BASE_RATES if rates is None else rates
    frame = pd.DataFrame(index=pd.DatetimeIndex(dates, name="date", freq=None))
    for name in DEATH_FIELDS:
        log_mu = np.log(rates[name]) - 0.08 * season + ozone_beta * (o3max8 - 45) + pm_beta * (pm25 - 15)
        frame[name] = rng.poisson(np.exp(log_mu)).astype("int64")
    measures = {"pm25": pm25, "o3avg": o3avg, "o3max8": o3max8, "tmax": tmax, "tmin": tmin, "rhmax": rhmax}
    for name in MEASURE_FIELDS:
        frame[name] = measures[name].astype("float64")
    return frame


@pytest.fixture
def series_factory():
    def build(basin="SC", **kwargs):
        return BasinSeries(basin=basin, frame=make_frame(**kwargs))

    return build


@pytest.fixture(scope="session")
def study_series():
    """Thirteen years for one basin, no pollutant effect"""
    return BasinSeries(basin="SC", frame=make_frame(seed=11))


@pytest.fixture(scope="session")
def short_series():
    """Four years for fast model fits"""
    return BasinSeries(basin="SFB", frame=make_frame(start="2000-01-01", end="2003-12-31", seed=5))

