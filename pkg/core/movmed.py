#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Moving Median
Moving median with a central gap, deviations from it, and partial correlations
of deviation series.

A 21-5 window around day t uses the 8 days on each side of a 5-day block
centered on t, so the median never sees t or its immediate neighbours.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from core.dataset import lagged
from core.exceptions import RankDeficiencyError, WindowError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowSpec:
    """Moving-median window: total width and centered gap, both odd"""

    width: int = 21
    gap: int = 5

    def __post_init__(self):
        if self.width % 2 == 0 or self.gap % 2 == 0:
            raise WindowError(f"window {self.label} must have odd width and gap")
        if not self.width > self.gap >= 1:
            raise WindowError(f"window {self.label} needs width > gap >= 1")
        if self.width - self.gap < 2:
            raise WindowError(f"window {self.label} leaves fewer than 2 usable cells")

    @property
    def label(self):
        return f"{self.width}-{self.gap}"

    @property
    def half(self):
        return (self.width - 1) // 2

    @property
    def usable(self):
        return self.width - self.gap

    def mask(self):
        """Boolean mask over window offsets, False inside the gap"""
        offsets = np.arange(-self.half, self.half + 1)
        return np.abs(offsets) > (self.gap - 1) // 2

    @classmethod
    def parse(cls, text):
        """Parse '21-5' style labels"""
        try:
            width, gap = (int(part) for part in str(text).split("-"))
        except ValueError as e:
            raise WindowError(f"cannot parse window '{text}'") from e
        return cls(width=width, gap=gap)


@dataclass(frozen=True)
class DeviationSeries:
    values: np.ndarray
    window: WindowSpec
    source: str = ""


def moving_median(values, spec=WindowSpec()):
    """Gapped moving median; missing near the boundaries and where too few cells are present"""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if spec.width > n:
        raise WindowError(f"window {spec.label} is longer than the series ({n} days)")

    out = np.full(n, np.nan)
    windows = sliding_window_view(values, spec.width)[:, spec.mask()]
    present = np.sum(~np.isnan(windows), axis=1)
    # more than half the usable cells missing -> undefined
    enough = present * 2 >= spec.usable
    if np.any(enough):
        out[spec.half : n - spec.half][enough] = np.nanmedian(windows[enough], axis=1)
    return out


def deviations(values, spec=WindowSpec(), source=""):
    """Observed minus gapped moving median"""
    values = np.asarray(values, dtype=float)
    return DeviationSeries(values=values - moving_median(values, spec), window=spec, source=source)


def spike_flags(deviation, low=15.0, high=28.0):
    """Flag days whose deviation lies in [low, high] (the temperature-spike band)"""
    values = deviation.values if isinstance(deviation, DeviationSeries) else np.asarray(deviation)
    with np.errstate(invalid="ignore"):
        return (values >= low) & (values <= high)


def deviation_frame(series, x_field, y_field, spec=WindowSpec(), lag=0):
    """Scatter data of y deviations against x deviations at day t - lag"""
    dev_x = deviations(lagged(series, x_field, lag), spec, source=x_field)
    dev_y = deviations(series.values(y_field), spec, source=y_field)
    frame = pd.DataFrame({
        "date": series.dates.strftime("%Y-%m-%d"),
        "lag": lag,
        f"dev_{x_field}": dev_x.values,
        f"dev_{y_field}": dev_y.values,
    })
    if x_field in ("tmax", "tmin"):
        frame["spike"] = spike_flags(dev_x).astype(int)
    return frame


def partial_correlations(matrix, names=None):
    """Partial correlation of every pair of columns given all remaining columns

    Uses complete-case rows only. The result equals the correlation of the
    residuals after regressing each variable of a pair on all the others,
    computed here from the inverse of the sample covariance.
    """
    if isinstance(matrix, pd.DataFrame):
        names = list(matrix.columns) if names is None else list(names)
        data = matrix.to_numpy(dtype=float)
    else:
        data = np.asarray(matrix, dtype=float)
        names = list(names) if names is not None else [f"v{i}" for i in range(data.shape[1])]

    data = data[~np.isnan(data).any(axis=1)]
    n, p = data.shape
    if n < p + 2:
        raise ValueError(f"need at least {p + 2} complete rows, got {n}")

    centered = data - data.mean(axis=0)
    _check_rank(centered, names)

    cov = centered.T @ centered / (n - 1)
    precision = linalg.inv(cov)
    scale = np.sqrt(np.diag(precision))
    partial = -precision / np.outer(scale, scale)
    np.fill_diagonal(partial, 1.0)
    partial = (partial + partial.T) / 2
    return pd.DataFrame(partial, index=names, columns=names)


def _check_rank(centered, names):
    """Raise naming the variables that are linear combinations of the others"""
    norms = np.linalg.norm(centered, axis=0)
    constant = [name for name, norm in zip(names, norms) if norm == 0]
    if constant:
        raise RankDeficiencyError("constant variables in partial correlation", constant)

    scaled = centered / norms
    _, r, pivot = linalg.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > diag[0] * 1e-10))
    if rank < centered.shape[1]:
        raise RankDeficiencyError(
            "collinear variables in partial correlation", [names[i] for i in pivot[rank:]]
        )
