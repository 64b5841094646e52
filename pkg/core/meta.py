#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Meta
Random-effects pooling of per-basin estimates. Each estimate is modelled as
theta_i ~ N(theta, S_i + sigma2); sigma2 is estimated by restricted maximum
likelihood on [0, 10 * var(theta_i)] and theta by inverse-variance weighting.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, stats

from core.exceptions import PoolingError

logger = logging.getLogger(__name__)

METHOD = "REML random-effects (in place of a hierarchical Bayesian combiner)"
Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class EffectEstimate:
    basin: str
    theta: float
    variance: float


@dataclass
class PooledEffect:
    theta_hat: float
    se: float
    sigma2: float
    q_statistic: float
    i_squared: float
    log_likelihood: float
    per_basin: list = field(default_factory=list)
    method: str = METHOD

    @property
    def z(self):
        return self.theta_hat / self.se if self.se > 0 else 0.0

    @property
    def p_value(self):
        return float(2.0 * stats.norm.sf(abs(self.z)))

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat,
            "se": self.se,
            "sigma2": self.sigma2,
            "z": self.z,
            "p_value": self.p_value,
            "q_statistic": self.q_statistic,
            "i_squared": self.i_squared,
            "reml_log_likelihood": self.log_likelihood,
            "per_basin": list(self.per_basin),
            "method": self.method,
        }


def reml_log_likelihood(sigma2, theta, variance):
    """Restricted log-likelihood of the between-basin variance (up to a constant)"""
    total = variance + sigma2
    weights = 1.0 / total
    mean = np.sum(weights * theta) / np.sum(weights)
    return -0.5 * (np.sum(np.log(total)) + np.log(np.sum(weights)) + np.sum(weights * (theta - mean) ** 2))


def _reml_score(sigma2, theta, variance):
    """Derivative of the restricted log-likelihood with respect to sigma2"""
    weights = 1.0 / (variance + sigma2)
    total = np.sum(weights)
    mean = np.sum(weights * theta) / total
    return 0.5 * (np.sum(weights ** 2 * (theta - mean) ** 2) - total + np.sum(weights ** 2) / total)


def estimate_sigma2(theta, variance):
    """Maximize the restricted likelihood over [0, 10 var(theta)]

    Bounded Brent search locates the maximum; an interior maximum is then
    polished by root-finding on the score.
    """
    spread = float(np.var(theta, ddof=1))
    if spread == 0.0:
        return 0.0
    upper = 10.0 * spread

    # estimates with zero sampling variance make the likelihood singular at 0
    exact = variance == 0
    if exact.any():
        # search on the log scale down to a vanishing floor
        lower = 1e-12 * upper
        objective = lambda u: -reml_log_likelihood(np.exp(u), theta, variance)
        result = optimize.minimize_scalar(objective, bounds=(np.log(lower), np.log(upper)), method="bounded",
                                          options={"xatol": 1e-10})
        best = float(np.exp(result.x))
        if best <= 1.01 * lower or not np.isfinite(result.fun):
            return 0.0
        return best

    if _reml_score(0.0, theta, variance) <= 0.0:
        return 0.0

    objective = lambda s: -reml_log_likelihood(s, theta, variance)
    result = optimize.minimize_scalar(objective, bounds=(0.0, upper), method="bounded",
                                      options={"xatol": 1e-12 * max(upper, 1.0)})
    best = float(result.x)

    width = max(1e-6 * upper, 1e-3 * best)
    lo, hi = max(best - width, 0.0), min(best + width, upper)
    score_lo, score_hi = _reml_score(lo, theta, variance), _reml_score(hi, theta, variance)
    if score_lo > 0 > score_hi:
        best = optimize.brentq(_reml_score, lo, hi, args=(theta, variance), xtol=1e-300, rtol=4 * np.finfo(float).eps)

    # boundary candidates
    candidates = [0.0, best, upper]
    values = [reml_log_likelihood(s, theta, variance) for s in candidates]
    return float(candidates[int(np.argmax(values))])


def pool(estimates, sigma2=None):
    """Pool per-basin estimates with a two-level normal random-effects model

    ``sigma2`` fixes the between-basin variance (0 gives the fixed-effects
    estimate, ``np.inf`` the unweighted mean).
    """
    estimates = list(estimates)
    if len(estimates) < 2:
        raise PoolingError(f"pooling needs at least 2 estimates, got {len(estimates)}")

    theta = np.array([float(e.theta) for e in estimates])
    variance = np.array([float(e.variance) for e in estimates])
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(variance))):
        raise PoolingError("non-finite estimate or variance")
    if np.any(variance < 0):
        raise PoolingError("variances must be non-negative")
    exact = variance == 0

    fixed = sigma2 is not None
    if not fixed:
        sigma2 = estimate_sigma2(theta, variance)

    if np.isinf(sigma2):
        theta_hat = float(np.mean(theta))
        se = np.inf
        weights = np.zeros_like(theta)
        log_likelihood = -np.inf
    elif sigma2 == 0 and exact.any():
        # inverse-variance limit: only the exactly known estimates carry weight
        theta_hat = float(np.mean(theta[exact]))
        se = 0.0
        weights = np.where(exact, np.inf, 1.0 / np.where(exact, 1.0, variance))
        log_likelihood = np.inf
    else:
        weights = 1.0 / (variance + sigma2)
        theta_hat = float(np.sum(weights * theta) / np.sum(weights))
        se = float(np.sum(weights) ** -0.5)
        log_likelihood = float(reml_log_likelihood(sigma2, theta, variance))

    # heterogeneity from fixed-effect weights
    if exact.any():
        fixed_mean = np.mean(theta[exact])
        inexact = ~exact
        q_statistic = float(np.sum((theta[inexact] - fixed_mean) ** 2 / variance[inexact]))
        if np.ptp(theta[exact]) > 0:
            q_statistic = np.inf
    else:
        fixed_weights = 1.0 / variance
        fixed_mean = np.sum(fixed_weights * theta) / np.sum(fixed_weights)
        q_statistic = float(np.sum(fixed_weights * (theta - fixed_mean) ** 2))
    k = len(theta)
    if np.isinf(q_statistic):
        i_squared = 1.0
    else:
        i_squared = float(max(0.0, (q_statistic - (k - 1)) / q_statistic)) if q_statistic > 0 else 0.0

    per_basin = []
    for estimate, t, v, w in zip(estimates, theta, variance, weights):
        shrink = 1.0 if np.isinf(sigma2) or v == 0 else sigma2 / (sigma2 + v)
        per_basin.append({
            "basin": estimate.basin,
            "theta": float(t),
            "variance": float(v),
            "weight": float(w),
            "shrunken": float(theta_hat + shrink * (t - theta_hat)),
        })

    logger.debug(f"Pooled {k} estimates: theta={theta_hat:.6g}, sigma2={sigma2:.6g}")
    return PooledEffect(
        theta_hat=theta_hat,
        se=se,
        sigma2=float(sigma2),
        q_statistic=q_statistic,
        i_squared=i_squared,
        log_likelihood=log_likelihood,
        per_basin=per_basin,
        method=METHOD if not fixed else f"random-effects with fixed sigma2={sigma2}",
    )


def pooled_curve(curves, grid=None):
    """Pointwise pooling of per-basin log-RR curves on a shared grid

    ``curves`` maps basin to a frame (or CumulativeCurve) with exposure,
    logRR and se columns. Grid points where every basin has zero variance
    (the reference exposure) keep their common value with a zero-width band.
    """
    frames = {basin: getattr(curve, "frame", curve) for basin, curve in curves.items()}
    if len(frames) < 2:
        raise PoolingError("curve pooling needs at least 2 basins")

    basins = list(frames)
    exposure = frames[basins[0]]["exposure"].to_numpy()
    if grid is not None and not np.array_equal(np.asarray(grid, dtype=float), exposure):
        raise PoolingError("curves were not evaluated on the requested grid")
    for basin in basins[1:]:
        if not np.array_equal(frames[basin]["exposure"].to_numpy(), exposure):
            raise PoolingError(f"curve grid of basin {basin} differs")

    log_rr = np.vstack([frames[b]["logRR"].to_numpy() for b in basins])
    se = np.vstack([frames[b]["se"].to_numpy() for b in basins])

    rows = []
    for j, x in enumerate(exposure):
        if np.all(se[:, j] == 0):
            rows.append((x, float(np.mean(log_rr[:, j])), 0.0, 0.0))
            continue
        pooled = pool([EffectEstimate(b, log_rr[i, j], se[i, j] ** 2) for i, b in enumerate(basins)])
        rows.append((x, pooled.theta_hat, pooled.se, pooled.sigma2))

    frame = pd.DataFrame(rows, columns=["exposure", "logRR", "se", "sigma2"])
    frame["RR"] = np.exp(frame["logRR"])
    frame["lo95"] = np.exp(frame["logRR"] - Z95 * frame["se"])
    frame["hi95"] = np.exp(frame["logRR"] + Z95 * frame["se"])
    return frame[["exposure", "logRR", "se", "RR", "lo95", "hi95", "sigma2"]]
