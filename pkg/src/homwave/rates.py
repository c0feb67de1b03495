"""Log-log rate fitting."""

import numpy as np


def fit_rate(pairs):
    """Least squares of log y on log x. Returns (slope, intercept, R^2)."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("fit_rate needs at least 3 points")
    x = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ValueError("fit_rate needs positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def fit_linear(x, y):
    """Ordinary least squares y = a x + b; returns (a, b, R^2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), float(r2)
