"""Empirical roughness: oscillation moduli, Hoelder slopes and an LIL statistic."""

from dataclasses import dataclass, field
import io
import math
import warnings

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import rng as _rng
from ._validation import check_paths

LIL_THRESHOLD = 1.0


def _lag_steps(lags, dt):
    steps = np.asarray(lags, float) / dt
    k = np.rint(steps).astype(int)
    if np.any(np.abs(steps - k) > 1e-9 * np.maximum(1.0, steps)):
        raise ValueError("lags must be multiples of the grid step")
    if np.any(k < 1):
        raise ValueError("lags must be at least one grid step")
    return k


def empirical_modulus(path, lags, dt=1.0):
    """``sup_{|t-s| <= lag} |X_t - X_s|`` for each lag (exact on the grid)."""
    x = np.asarray(path, float)
    if x.ndim != 1:
        raise ValueError("empirical_modulus takes a single path")
    out = np.empty(len(np.atleast_1d(lags)))
    for idx, k in enumerate(_lag_steps(np.atleast_1d(lags), dt)):
        k = min(k, x.size - 1)
        # every window of k + 1 consecutive points is covered by some filter
        # window; truncated edge windows are subsets of full ones
        hi = maximum_filter1d(x, size=k + 1, mode="nearest")
        lo = minimum_filter1d(x, size=k + 1, mode="nearest")
        out[idx] = float(np.max(hi - lo))
    return out


def dyadic_lags(n, dt, min_steps=4, max_fraction=0.125):
    """Lags ``2^k dt`` within ``[min_steps dt, max_fraction * n dt]``."""
    top = max_fraction * n
    steps = [2 ** k for k in range(int(math.log2(min_steps)), 64) if 2 ** k <= top]
    return np.array(steps, float) * dt


@dataclass(frozen=True)
class HolderEstimate:
    slope: float
    stderr: float
    lags: np.ndarray = field(repr=False)
    oscillation: np.ndarray = field(repr=False)


def holder_estimate(path, dt=1.0, lags=None):
    """Log-log slope of the oscillation against the lag, clamped to [0, 1]."""
    x = np.asarray(path, float)
    lags = dyadic_lags(x.size - 1, dt) if lags is None else np.asarray(lags, float)
    if lags.size < 4:
        raise ValueError(f"need at least 4 lags, got {lags.size}")
    osc = empirical_modulus(x, lags, dt)
    if np.any(osc <= 0):
        raise ValueError("degenerate path: zero oscillation at some lag")
    X, Y = np.log(lags), np.log(osc)
    (slope, icpt), cov = np.polyfit(X, Y, 1, cov=True)
    return HolderEstimate(float(np.clip(slope, 0.0, 1.0)), float(math.sqrt(cov[0, 0])),
                          lags, osc)


@dataclass(frozen=True)
class LILResult:
    statistic: np.ndarray = field(repr=False)
    exceedance: float
    t_range: tuple


def lil_statistic(paths, eta, dt, t_min=None):
    """``sup_t |X_t| / (eta(t) sqrt(log log(1 / eta(t)^2)))`` per path.

    ``t`` runs over grid times in ``[t_min, T/4]``; times where
    ``eta(t)^2 >= 1/e`` (iterated log not positive) are dropped with a
    warning. ``exceedance`` is the fraction of paths above 1.
    """
    X = check_paths(paths)
    n = X.shape[1] - 1
    t = np.arange(n + 1) * dt
    t_min = 2 * dt if t_min is None else t_min
    if t_min < 2 * dt * (1 - 1e-12):
        raise ValueError("t_min must be at least two grid steps")
    keep = (t >= t_min * (1 - 1e-12)) & (t <= t[-1] / 4 * (1 + 1e-12))
    e2 = np.asarray(eta.eta2(t), float) if hasattr(eta, "eta2") else np.asarray(eta(t), float) ** 2
    ok = keep & (e2 > 0) & (e2 < math.exp(-1))
    if np.any(keep & ~ok):
        warnings.warn("eta(t)^2 >= 1/e on part of the range; range shrunk",
                      RuntimeWarning, stacklevel=2)
    if not np.any(ok):
        raise ValueError("no grid time left where the iterated logarithm is defined")
    scale = np.sqrt(e2[ok]) * np.sqrt(np.log(np.log(1.0 / e2[ok])))
    stat = np.max(np.abs(X[:, ok]) / scale, axis=1)
    return LILResult(stat, float(np.mean(stat > LIL_THRESHOLD)),
                     (float(t[ok][0]), float(t[ok][-1])))


@dataclass
class RoughnessReport:
    lags: np.ndarray = field(repr=False)
    median_oscillation: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)
    slope: float = math.nan
    slope_stderr: float = math.nan
    lil_exceedance: float = math.nan

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("lag,median_oscillation,slope,slope_stderr,lil_exceedance\n")
        for lag, osc in zip(self.lags, self.median_oscillation):
            buf.write("%.17g,%.17g,%.17g,%.17g,%.17g\n" % (
                lag, osc, self.slope, self.slope_stderr, self.lil_exceedance))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def roughness_report(paths, dt, eta=None, workers=1, t_min=None):
    """Per-path Hoelder slopes and median oscillations; LIL if ``eta`` given.

    ``slope_stderr`` is the spread of the per-path slopes divided by the
    square root of the path count.
    """
    X = check_paths(paths)
    lags = dyadic_lags(X.shape[1] - 1, dt)
    ests = _rng.map_blocks(lambda i: holder_estimate(X[i], dt, lags),
                           [(i,) for i in range(X.shape[0])], workers)
    slopes = np.array([e.slope for e in ests])
    osc = np.median(np.array([e.oscillation for e in ests]), axis=0)
    se = float(np.std(slopes, ddof=1) / math.sqrt(slopes.size)) if slopes.size > 1 else ests[0].stderr
    lil = lil_statistic(X, eta, dt, t_min).exceedance if eta is not None else math.nan
    return RoughnessReport(lags, osc, slopes, float(np.median(slopes)), se, lil)


class HolderExponentEstimator(BaseEstimator, TransformerMixin):
    """Estimate path roughness from rows of ``X`` (paths on a uniform grid).

    ``fit`` stores ``slopes_`` and ``median_slope_``; ``transform`` maps each
    path to its clamped log-log oscillation slope.
    """

    def __init__(self, dt=1.0, min_lag_steps=4, max_lag_fraction=0.125):
        self.dt = dt
        self.min_lag_steps = min_lag_steps
        self.max_lag_fraction = max_lag_fraction

    def _slopes(self, X):
        X = check_paths(X)
        lags = dyadic_lags(X.shape[1] - 1, self.dt, self.min_lag_steps, self.max_lag_fraction)
        return np.array([holder_estimate(x, self.dt, lags).slope for x in X])

    def fit(self, X, y=None):
        self.slopes_ = self._slopes(X)
        self.median_slope_ = float(np.median(self.slopes_))
        return self

    def transform(self, X):
        check_is_fitted(self, "slopes_")
        return self._slopes(X)[:, None]
