"""Small-noise Monte Carlo: event probabilities, eps-sweeps and rate checks."""

from dataclasses import dataclass, field
import io
import math
import warnings

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LinearRegression
from sklearn.utils.validation import check_is_fitted

from . import rng as _rng
from ._validation import check_eps, check_eps_list
from .gaussian import Grid
from .model import ModelError, map_log_price_blocks

EVENT_KINDS = ("terminal_geq", "terminal_leq", "barrier_max_geq", "barrier_min_leq")
MIN_PATHS = 1000
PILOT_PATHS = 1000
MIN_EXPECTED_HITS = 50
BAND_Z = 1.96


@dataclass(frozen=True)
class EventSpec:
    """Event on ``X - x0``; ``threshold`` is in log-price units."""

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"event kind must be one of {EVENT_KINDS}, got {self.kind!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("event threshold must be finite")

    def hits(self, X):
        """Indicator per path of a ``(paths, n + 1)`` block."""
        c = self.threshold
        if self.kind == "terminal_geq":
            return X[:, -1] >= c
        if self.kind == "terminal_leq":
            return X[:, -1] <= c
        if self.kind == "barrier_max_geq":
            return X.max(axis=1) >= c
        return X.min(axis=1) <= c


@dataclass(frozen=True)
class MCEstimate:
    eps: float
    n_paths: int
    hits: int
    p_hat: float
    se: float
    eps_log_p: float
    band: tuple
    zero_hit: bool

    @classmethod
    def from_counts(cls, eps, n, hits):
        p = hits / n
        se = math.sqrt(p * (1 - p) / n)
        if hits == 0:
            return cls(eps, n, 0, 0.0, 0.0, -math.inf, (-math.inf, -math.inf), True)
        elp = eps * math.log(p)
        half = BAND_Z * eps * se / p
        return cls(eps, n, hits, p, se, elp, (elp - half, elp + half), False)

    @classmethod
    def exact(cls, eps, p):
        """Row fed by an exact probability (no sampling error)."""
        if p <= 0:
            return cls(eps, 0, 0, 0.0, 0.0, -math.inf, (-math.inf, -math.inf), True)
        elp = eps * math.log(p)
        return cls(eps, 0, 0, p, 0.0, elp, (elp, elp), False)

    @property
    def delta_var(self):
        """Delta-method variance of ``eps log p_hat``: ``eps^2 (1 - p) / (n p)``."""
        if self.n_paths == 0 or self.zero_hit:
            return 0.0
        # p_hat = 1 has zero delta-method variance; floor at one-miss resolution
        q = max(1 - self.p_hat, 1.0 / self.n_paths)
        return self.eps ** 2 * q / (self.n_paths * self.p_hat)


class LDPRateExtrapolator(BaseEstimator, RegressorMixin):
    """Affine extrapolation ``eps log p = -L + a eps`` to ``eps -> 0``.

    ``fit(eps, eps_log_p, sample_weight)`` stores ``intercept_``, ``slope_``,
    ``rate_ = -intercept_`` and the weighted RMS ``residual_``.
    """

    def __init__(self, weighted=True):
        self.weighted = weighted

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, float).reshape(-1, 1)
        y = np.asarray(y, float)
        if X.shape[0] < 3:
            raise ValueError("need at least 3 rows to fit the affine model")
        w = sample_weight if self.weighted else None
        reg = LinearRegression().fit(X, y, sample_weight=w)
        self.intercept_ = float(reg.intercept_)
        self.slope_ = float(reg.coef_[0])
        self.rate_ = -self.intercept_
        r = y - reg.predict(X)
        ww = np.ones_like(y) if w is None else np.asarray(w, float) / np.mean(w)
        self.residual_ = float(np.sqrt(np.sum(ww * r * r) / r.size))
        self.n_rows_ = int(X.shape[0])
        return self

    def predict(self, X):
        check_is_fitted(self, "intercept_")
        X = np.asarray(X, float).reshape(-1)
        return self.intercept_ + self.slope_ * X


@dataclass
class SweepTable:
    rows: list
    fit: LDPRateExtrapolator = None
    advisories: list = field(default_factory=list)

    @property
    def rate(self):
        return self.fit.rate_ if self.fit is not None else math.nan

    @property
    def intercept(self):
        return self.fit.intercept_ if self.fit is not None else math.nan

    def to_csv(self, path=None):
        """CSV with a trailing ``# fit`` comment block; returns the text."""
        buf = io.StringIO()
        buf.write("eps,n,hits,p_hat,se,eps_log_p,band_lo,band_hi\n")
        for r in self.rows:
            buf.write(",".join([_f(r.eps), str(r.n_paths), str(r.hits), _f(r.p_hat),
                                _f(r.se), _f(r.eps_log_p), _f(r.band[0]), _f(r.band[1])]) + "\n")
        if self.fit is None:
            buf.write("# fit: none (fewer than 3 usable rows)\n")
        else:
            f = self.fit
            buf.write(f"# fit: model=eps_log_p = intercept + slope * eps\n"
                      f"# fit: weighted={str(bool(f.weighted)).lower()}\n"
                      f"# fit: rows_used={f.n_rows_}\n"
                      f"# fit: intercept={_f(f.intercept_)}\n"
                      f"# fit: slope={_f(f.slope_)}\n"
                      f"# fit: rate={_f(f.rate_)}\n"
                      f"# fit: residual={_f(f.residual_)}\n")
        for a in self.advisories:
            buf.write(f"# advisory: {a}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _f(x):
    return "%.17g" % x


def _derived_seed(seed, *words):
    return int(np.random.SeedSequence([int(seed), *words]).generate_state(1, np.uint64)[0])


def estimate_probability(model, eps, event, n_paths, seed, grid=None, n=64,
                         scheme="convolution", workers=1):
    """Indicator-mean estimate of ``P(X^(eps) - x0 in event)``.

    Counts are reduced per block in block order, so the estimate depends
    only on the seed.
    """
    check_eps(eps)
    if n_paths < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths, got {n_paths}")
    grid = grid or Grid(model.T, n)
    counts = map_log_price_blocks(model, eps, grid, n_paths, seed,
                                  lambda X: int(np.count_nonzero(event.hits(X))),
                                  scheme=scheme, workers=workers)
    return MCEstimate.from_counts(eps, n_paths, int(sum(counts)))


def analytic_gaussian_probability(model, eps, event):
    """Exact probability for constant volatility and constant drift."""
    s, r = model.volatility.constant_value, model.drift.constant_rate
    if s is None or r is None:
        raise ModelError("analytic probability needs constant volatility and drift")
    if not event.kind.startswith("terminal"):
        raise ModelError("analytic probability covers terminal events only")
    check_eps(eps)
    T = model.T
    mean, sd = r * T - 0.5 * eps * s * s * T, math.sqrt(eps * s * s * T)
    z = (event.threshold - mean) / sd
    return float(norm.sf(z) if event.kind == "terminal_geq" else norm.cdf(z))


def ldp_sweep(model, event, eps_list, n_paths=None, seed=0, feed="mc", grid=None, n=64,
              scheme="convolution", workers=1, pilot=True):
    """Table of ``eps log p_hat`` over decreasing ``eps`` with an affine fit.

    ``feed="analytic"`` uses the exact Gaussian probability (constant
    coefficients) and an unweighted fit; the Monte Carlo feed weights rows
    by inverse delta-method variance. Zero-hit rows are kept in the table
    but excluded from the fit.
    """
    eps_list = check_eps_list(eps_list)
    advisories = []
    if feed == "analytic":
        rows = [MCEstimate.exact(e, analytic_gaussian_probability(model, e, event))
                for e in eps_list]
        weighted = False
    elif feed == "mc":
        counts = [n_paths] * len(eps_list) if np.isscalar(n_paths) else list(n_paths)
        if len(counts) != len(eps_list):
            raise ValueError("n_paths must be a scalar or match eps_list")
        if pilot:
            e_min, n_min = eps_list[-1], counts[-1]
            pil = estimate_probability(model, e_min, event, PILOT_PATHS,
                                       _derived_seed(seed, _rng.PILOT), grid, n, scheme, workers)
            expected = pil.p_hat * n_min
            if expected < MIN_EXPECTED_HITS:
                msg = (f"pilot at eps={e_min:g} saw {pil.hits}/{PILOT_PATHS} hits; "
                       f"expected hits with n={n_min} is {expected:.3g} < {MIN_EXPECTED_HITS}")
                advisories.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)

        def one(k):
            return estimate_probability(model, eps_list[k], event, int(counts[k]),
                                        _derived_seed(seed, k), grid, n, scheme, workers)
        rows = [one(k) for k in range(len(eps_list))]
        weighted = True
    else:
        raise ValueError(f"feed must be 'mc' or 'analytic', got {feed!r}")

    use = [r for r in rows if not r.zero_hit]
    table = SweepTable(rows, None, advisories)
    if len(use) < 3:
        return table
    x = np.array([r.eps for r in use])
    y = np.array([r.eps_log_p for r in use])
    w = None
    if weighted:
        var = np.array([r.delta_var for r in use])
        w = 1.0 / var
    table.fit = LDPRateExtrapolator(weighted=weighted).fit(x, y, sample_weight=w)
    return table


@dataclass(frozen=True)
class Verdict:
    status: str
    gap: float
    L_hat: float
    L_solver: float
    threshold: float
    reason: str = ""

    @property
    def consistent(self):
        return self.status == "consistent"


def compare_rate(sweep, rate, tolerance=0.1):
    """``consistent`` iff ``|L_hat - L| <= tolerance * max(L, 0.05)``."""
    L = float(getattr(rate, "rate", getattr(rate, "value", rate)))
    thr = tolerance * max(L, 0.05)
    if sweep.fit is None:
        return Verdict("inconsistent", math.nan, math.nan, L, thr, "no fit")
    gap = abs(sweep.rate - L)
    return Verdict("consistent" if gap <= thr else "inconsistent", gap, sweep.rate, L, thr)
