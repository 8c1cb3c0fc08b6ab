"""Log-log slope estimation and empirical survival functions.

Every polynomial-rate check in the package funnels through these helpers so
that fit windows, grids and uncertainty bands are computed one way only.
"""

from dataclasses import dataclass, field

import numpy as np


def geometric_grid(lo, hi, count=40):
    """Distinct integers spread geometrically over [lo, hi]."""
    if lo < 1 or hi < lo:
        raise ValueError(f"bad grid range [{lo}, {hi}]")
    return np.unique(np.round(np.geomspace(lo, hi, count)).astype(np.int64))


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    n_points: int
    window: tuple = (0, 0)
    widened: bool = False  # set when too few points support the fit
    extra: dict = field(default_factory=dict)


def loglog_fit(x, y):
    """OLS fit of log y against log x; y must be positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    m = lx.size
    if m < 2:
        return SlopeFit(np.nan, np.nan, np.inf, m, widened=True)
    A = np.column_stack([lx, np.ones(m)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    if m > 2:
        sxx = np.sum((lx - lx.mean()) ** 2)
        stderr = float(np.sqrt(resid @ resid / (m - 2) / sxx))
    else:
        stderr = np.inf
    widened = m < 5
    return SlopeFit(float(coef[0]), float(coef[1]), stderr, m,
                    window=(float(x[keep].min()), float(x[keep].max())),
                    widened=widened)


def modulated_loglog_fit(n, y, modulation):
    """OLS fit of log y against log(n * modulation(n)).

    Used for tails of the form n^(-beta) * (slowly varying): the modulation
    column carries the observable slowly-varying factor so the fitted slope
    estimates beta alone.  With a constant modulation this reduces exactly to
    ``loglog_fit``.
    """
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    mod = np.asarray(modulation, dtype=float)
    keep = (n > 0) & (y > 0) & (mod > 0)
    fit = loglog_fit(n[keep] * mod[keep], y[keep])
    fit.extra["modulated"] = True
    return fit


def empirical_survival(samples, grid, strict=True):
    """P(X > n) (strict) or P(X >= n) over an integer grid."""
    s = np.sort(np.asarray(samples))
    grid = np.asarray(grid)
    side = "right" if strict else "left"
    counts = s.size - np.searchsorted(s, grid, side=side)
    return counts / s.size


def survival_fit_window(grid, surv, n_samples, min_tail_count=10, lo=None, hi=None):
    """Restrict a survival curve to the part an MC sample can resolve.

    Points with fewer than ``min_tail_count`` surviving samples are dropped;
    the returned mask also honours explicit [lo, hi] bounds.
    """
    surv = np.asarray(surv, dtype=float)
    grid = np.asarray(grid)
    mask = surv * n_samples >= min_tail_count
    if lo is not None:
        mask &= grid >= lo
    if hi is not None:
        mask &= grid <= hi
    return mask


def relative_spread(values):
    """(max - min) / median, a scale-free stability measure."""
    v = np.asarray(values, dtype=float)
    med = np.median(v)
    if med == 0:
        return np.inf
    return float((v.max() - v.min()) / abs(med))
