"""Weighted log-log slope fits for rate experiments."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    slope_se: float
    ci_low: float
    ci_high: float
    n_points: int
    dropped_first: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def fit_loglog_slope(n: Sequence[float], mean: Sequence[float], se: Sequence[float] | None = None,
                     drop_first: bool = False, level: float = 0.95) -> SlopeFit:
    """Fit log(mean) = a + b log(n) by weighted least squares.

    Weights come from the delta method, var(log mean) ~ (se / mean)^2. When no
    standard errors are available (or all are zero) the fit is unweighted. The
    slope covariance is inflated by the reduced chi-square when that exceeds 1.
    """
    x = np.log(np.asarray(n, dtype=float))
    y_raw = np.asarray(mean, dtype=float)
    if np.any(y_raw <= 0):
        raise ValueError("log-log fit needs strictly positive means")
    y = np.log(y_raw)
    s = np.zeros_like(y) if se is None else np.asarray(se, dtype=float) / y_raw
    if drop_first:
        x, y, s = x[1:], y[1:], s[1:]
    if len(x) < 2:
        raise ValueError("need at least two points")
    if np.all(s <= 0):
        w = np.ones_like(y)
    else:
        # a zero standard error among positive ones gets the smallest positive one
        w = 1.0 / np.where(s > 0, s, s[s > 0].min()) ** 2
    A = np.column_stack([np.ones_like(x), x])
    AtW = A.T * w
    cov = np.linalg.inv(AtW @ A)
    intercept, slope = cov @ (AtW @ y)
    resid = y - A @ np.array([intercept, slope])
    dof = len(x) - 2
    if dof > 0:
        chi2 = float(np.sum(w * resid ** 2)) / dof
        scale = chi2 if np.all(s <= 0) else max(1.0, chi2)
        cov = cov * scale
    slope_se = math.sqrt(max(cov[1, 1], 0.0))
    q = stats.t.ppf(0.5 + level / 2, dof) if dof > 0 else math.inf
    return SlopeFit(float(slope), float(intercept), slope_se, float(slope - q * slope_se),
                    float(slope + q * slope_se), len(x), drop_first)
