"""Drift and volatility families, model specs and the scaled log-price simulator."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

from . import rng as _rng
from .gaussian import Grid, PathEnsemble, _factor, convolution_weights, apply_weights
from .kernels import VolterraKernel, covariance, variance_function
from .moduli import ModulusOfContinuity
from .quadrature import graded_quad


class ModelError(ValueError):
    """Invalid model definition or misuse of a model."""


# --- composable primitives -------------------------------------------------

def _compile(expr):
    """Turn a nested dict expression in ``u`` into ``(value, d/du)`` callables.

    Supported nodes: ``{"const": a}``, ``{"affine": [a, b]}`` (``a + b u``),
    ``{"abs": e}``, ``{"exp": e}``, ``{"power": [e, p]}`` (``|e|**p``),
    ``{"scale": [k, e]}``, ``{"sum": [e, ...]}``, ``{"product": [e, e]}``.
    """
    if not isinstance(expr, dict) or len(expr) != 1:
        raise ModelError(f"bad expression node {expr!r}")
    (op, arg), = expr.items()
    if op == "const":
        a = float(arg)
        return (lambda u: np.full(np.shape(u), a), lambda u: np.zeros(np.shape(u)))
    if op == "affine":
        a, b = map(float, arg)
        return (lambda u: a + b * u, lambda u: np.full(np.shape(u), b))
    if op == "abs":
        f, df = _compile(arg)
        return (lambda u: np.abs(f(u)), lambda u: np.sign(f(u)) * df(u))
    if op == "exp":
        f, df = _compile(arg)
        return (lambda u: np.exp(f(u)), lambda u: np.exp(f(u)) * df(u))
    if op == "power":
        inner, p = arg
        p = float(p)
        f, df = _compile(inner)

        def dpow(u):
            v = f(u)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = p * np.abs(v) ** (p - 1) * np.sign(v) * df(u)
            return np.where(v == 0, 0.0 if p > 1 else np.inf, d)
        return (lambda u: np.abs(f(u)) ** p, dpow)
    if op == "scale":
        k, inner = arg
        k = float(k)
        f, df = _compile(inner)
        return (lambda u: k * f(u), lambda u: k * df(u))
    if op == "sum":
        parts = [_compile(e) for e in arg]
        return (lambda u: sum(f(u) for f, _ in parts),
                lambda u: sum(d(u) for _, d in parts))
    if op == "product":
        (f, df), (g, dg) = [_compile(e) for e in arg]
        return (lambda u: f(u) * g(u), lambda u: df(u) * g(u) + f(u) * dg(u))
    raise ModelError(f"unknown expression operator {op!r}")


@dataclass(frozen=True)
class DriftFunction:
    """``b(t, u)``: ``constant`` (r), ``affine`` (a0 + a1 u) or ``custom``."""

    family: str
    params: dict
    _f: object = field(repr=False, compare=False, default=None)
    _df: object = field(repr=False, compare=False, default=None)

    def __call__(self, t, u):
        return self._f(np.asarray(t, float), np.asarray(u, float))

    def du(self, t, u):
        return self._df(np.asarray(t, float), np.asarray(u, float))

    @property
    def constant_rate(self):
        """The rate ``r`` when the drift is constant, else ``None``."""
        return self.params["r"] if self.family == "constant" else None


_DRIFT_KEYS = {"constant": {"r"}, "affine": {"a0", "a1"}, "custom": {"expr"}}
_VOL_KEYS = {"constant": {"sigma0"}, "wick_exp": {"c", "modulus"},
             "rough_bergomi": {"c", "H"}, "abs_linear": {"c"},
             "custom": {"expr", "strictly_positive"}}


def _check_keys(kind, family, params, table):
    allowed = table.get(family)
    if allowed is None:
        raise ModelError(f"unknown {kind} family {family!r}")
    extra = sorted(set(params) - allowed)
    if extra:
        raise ModelError(f"{kind} family {family!r} does not take {', '.join(extra)}; "
                         f"expected {', '.join(sorted(allowed))}")


def make_drift(family, params=None):
    params = dict(params or {})
    _check_keys("drift", family, params, _DRIFT_KEYS)
    if family == "constant":
        r = float(params.get("r", 0.0))
        return DriftFunction("constant", {"r": r},
                             lambda t, u: np.full(np.broadcast(t, u).shape, r),
                             lambda t, u: np.zeros(np.broadcast(t, u).shape))
    if family == "affine":
        a0, a1 = float(params.get("a0", 0.0)), float(params.get("a1", 0.0))
        return DriftFunction("affine", {"a0": a0, "a1": a1},
                             lambda t, u: a0 + a1 * u + 0 * t,
                             lambda t, u: np.full(np.broadcast(t, u).shape, a1))
    if family == "custom":
        f, df = _compile(params.get("expr"))
        return DriftFunction("custom", {"expr": params["expr"]},
                             lambda t, u: f(u + 0 * t), lambda t, u: df(u + 0 * t))
    raise ModelError(f"unknown drift family {family!r}")


@dataclass(frozen=True)
class VolatilityFunction:
    """``sigma(t, u)`` with its ``u``-derivative and zero-set metadata.

    ``zero_set`` is ``"empty"`` for strictly positive families, ``"u=0"``
    when ``sigma(t, u) = 0`` exactly on ``u = 0`` and ``"unknown"`` for
    custom expressions.
    """

    family: str
    params: dict
    strictly_positive: bool
    zero_set: str
    _f: object = field(repr=False, compare=False, default=None)
    _df: object = field(repr=False, compare=False, default=None)

    def __call__(self, t, u):
        return self._f(np.asarray(t, float), np.asarray(u, float))

    def du(self, t, u):
        return self._df(np.asarray(t, float), np.asarray(u, float))

    @property
    def constant_value(self):
        return self.params["sigma0"] if self.family == "constant" else None


def make_volatility(family, params=None):
    params = dict(params or {})
    _check_keys("volatility", family, params, _VOL_KEYS)
    if family == "constant":
        s0 = float(params.get("sigma0", float("nan")))
        if not s0 > 0:
            raise ModelError(f"constant volatility must be positive, got {s0}")
        return VolatilityFunction(
            "constant", {"sigma0": s0}, True, "empty",
            lambda t, u: np.full(np.broadcast(t, u).shape, s0),
            lambda t, u: np.zeros(np.broadcast(t, u).shape))
    if family == "wick_exp":
        c = float(params.get("c", float("nan")))
        mod = params.get("modulus")
        if not c > 0:
            raise ModelError(f"wick_exp needs c > 0, got {c}")
        if not isinstance(mod, ModulusOfContinuity):
            raise ModelError("wick_exp needs a modulus of continuity")

        def f(t, u):
            return np.exp(-0.5 * c * c * mod.eta2(t) + c * u)
        return VolatilityFunction("wick_exp", {"c": c, "modulus": mod.describe()},
                                  True, "empty", f, lambda t, u: c * f(t, u))
    if family == "rough_bergomi":
        c = float(params.get("c", float("nan")))
        H = float(params.get("H", float("nan")))
        if not c > 0 or not 0 < H < 0.5:
            raise ModelError(f"rough_bergomi needs c > 0 and H in (0, 1/2), got c={c}, H={H}")
        k = c * c / (4 * H * special.gamma(H + 0.5) ** 2)

        def f(t, u):
            return np.exp(-k * np.abs(t) ** (2 * H) + c * u)
        return VolatilityFunction("rough_bergomi", {"c": c, "H": H}, True, "empty",
                                  f, lambda t, u: c * f(t, u))
    if family == "abs_linear":
        c = float(params.get("c", float("nan")))
        if not c > 0:
            raise ModelError(f"abs_linear needs c > 0, got {c}")
        return VolatilityFunction(
            "abs_linear", {"c": c}, False, "u=0",
            lambda t, u: c * np.abs(u) + 0 * t,
            lambda t, u: c * np.sign(u) + 0 * t)
    if family == "custom":
        f, df = _compile(params.get("expr"))
        positive = bool(params.get("strictly_positive", False))
        return VolatilityFunction("custom", {"expr": params["expr"]}, positive,
                                  "empty" if positive else "unknown",
                                  lambda t, u: f(u + 0 * t), lambda t, u: df(u + 0 * t))
    raise ModelError(f"unknown volatility family {family!r}")


@dataclass(frozen=True)
class ModelSpec:
    drift: DriftFunction
    volatility: VolatilityFunction
    rho: float
    kernel: VolterraKernel
    T: float
    x0: float = 0.0

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ModelError(f"correlation must lie in (-1, 1), got {self.rho}")
        if not self.T > 0:
            raise ModelError(f"horizon must be positive, got {self.T}")
        if self.T > self.kernel.T * (1 + 1e-12):
            raise ModelError(f"model horizon {self.T} exceeds kernel domain {self.kernel.T}")

    @property
    def rho_bar(self):
        return math.sqrt(1 - self.rho ** 2)

    @property
    def s0(self):
        return math.exp(self.x0)


# --- simulation -------------------------------------------------------------

class _LogPriceSimulator:
    """Per-block generator of ``(X - x0, B_hat, dB)``; weights built once."""

    def __init__(self, model, eps, grid, seed, scheme):
        if not 0 < eps <= 1:
            raise ModelError(f"eps must lie in (0, 1], got {eps}")
        if abs(grid.T - model.T) > 1e-12 * model.T:
            raise ModelError(f"grid horizon {grid.T} differs from model horizon {model.T}")
        self.model, self.eps, self.grid, self.seed = model, eps, grid, seed
        self.scheme = scheme
        kernel = model.kernel
        if scheme == "convolution":
            self.w, self.fallback = convolution_weights(kernel, grid)
        elif scheme == "cholesky":
            self.L = _factor(_joint_covariance(kernel, grid))
            self.fallback = False
        else:
            raise ModelError(f"unknown scheme {scheme!r}")

    def block(self, b, start, stop):
        m, n, dt = stop - start, self.grid.n, self.grid.dt
        model, eps = self.model, self.eps
        z = _rng.stream(self.seed, _rng.VOL_DRIVER, b).standard_normal((m, n))
        if self.scheme == "convolution":
            dB = z * math.sqrt(dt)
            bhat = np.zeros((m, n + 1))
            bhat[:, 1:] = apply_weights(self.w, dB)
        else:
            # joint draw of (B_hat_{t_1..t_n}, B_{t_1..t_n})
            z2 = _rng.stream(self.seed, _rng.VOL_DRIVER, b + (1 << 40)).standard_normal((m, n))
            joint = np.hstack([z, z2]) @ self.L.T
            bhat = np.zeros((m, n + 1))
            bhat[:, 1:] = joint[:, :n]
            Bpath = np.zeros((m, n + 1))
            Bpath[:, 1:] = joint[:, n:]
            dB = np.diff(Bpath, axis=1)
        dW = _rng.stream(self.seed, _rng.PRICE_NOISE, b).standard_normal((m, n)) * math.sqrt(dt)
        t = self.grid.times[:-1]
        u = math.sqrt(eps) * bhat[:, :-1]
        sig = model.volatility(t[None, :], u)
        drift = model.drift(t[None, :], u)
        incr = (drift - 0.5 * eps * sig ** 2) * dt \
            + math.sqrt(eps) * sig * (model.rho_bar * dW + model.rho * dB)
        X = np.zeros((m, n + 1))
        np.cumsum(incr, axis=1, out=X[:, 1:])
        return X, bhat, dB


def _joint_covariance(kernel, grid):
    """Covariance of ``(B_hat_{t_1..t_n}, B_{t_1..t_n})``."""
    t = grid.times[1:]
    n = t.size
    C = np.zeros((2 * n, 2 * n))
    var = variance_function(kernel, t)
    for i in range(n):
        C[i, i] = var[i]
        for j in range(i):
            C[i, j] = C[j, i] = covariance(kernel, t[i], t[j])
    # Cov(B_hat_ti, B_tj) = int_0^{min} K(t_i, u) du
    for i in range(n):
        for j in range(n):
            lo = min(t[i], t[j])
            if kernel.stationary and kernel.tau_primitive is not None:
                A = kernel.tau_primitive(np.array([t[i], t[i] - lo]))
                val = float(A[0] - A[1])
            else:
                val = graded_quad(lambda u: kernel(t[i], u), 0.0, lo,
                                  left=kernel.origin_exponent < 0, right=lo == t[i])
            C[i, n + j] = C[n + j, i] = val
    C[n:, n:] = np.minimum.outer(t, t)
    return C


def simulate_log_price(model, eps, grid, n_paths, seed, scheme="convolution",
                       workers=1, block_size=_rng.DEFAULT_BLOCK, keep_driver=False):
    """Euler (left-point) paths of ``X^(eps) - x0`` for the scaled model.

    The volatility driver and the correlated Brownian part share the same
    increments ``dB``. With ``keep_driver`` the returned ensemble carries
    ``B_hat`` in ``driver``.
    """
    sim = _LogPriceSimulator(model, eps, grid, seed, scheme)
    parts = _rng.map_blocks(sim.block, _rng.block_ranges(n_paths, block_size), workers)
    X = np.vstack([p[0] for p in parts])
    dB = np.vstack([p[2] for p in parts])
    ens = PathEnsemble(grid, X, seed, scheme, model.kernel.describe(),
                       increments=dB,
                       flags=("cell_average_fallback",) if sim.fallback else ())
    ens.driver = np.vstack([p[1] for p in parts]) if keep_driver else None
    return ens


def map_log_price_blocks(model, eps, grid, n_paths, seed, reducer, scheme="convolution",
                         workers=1, block_size=_rng.DEFAULT_BLOCK):
    """Apply ``reducer(X_block)`` to every path block; results in block order."""
    sim = _LogPriceSimulator(model, eps, grid, seed, scheme)
    return _rng.map_blocks(lambda b, s, e: reducer(sim.block(b, s, e)[0]),
                           _rng.block_ranges(n_paths, block_size), workers)


# --- growth and continuity probes ---------------------------------------------

@dataclass(frozen=True)
class GrowthCertificate:
    holds: bool
    c1: float
    c2: float
    point: tuple = None
    note: str = ""


def sublinear_growth_check(vol, T=1.0, radius=5.0, c1=None, c2=None, n_probe=201):
    """Check ``sigma(t, x)^2 <= c1 + c2 x^2`` on a probe lattice.

    Constant and ``abs_linear`` volatilities are certified analytically.
    Otherwise, given constants are checked directly; without constants the
    worst ratio ``sigma^2 / (1 + x^2)`` is tracked over boxes of radius
    ``radius * 2**k`` and a ratio that keeps growing faster than 4x per
    doubling is reported as a violation.
    """
    if vol.family == "constant" and c1 is None:
        return GrowthCertificate(True, vol.params["sigma0"] ** 2, 0.0, note="analytic")
    if vol.family == "abs_linear" and c1 is None:
        return GrowthCertificate(True, 0.0, vol.params["c"] ** 2, note="analytic")
    ts = np.linspace(0.0, T, 9)
    if c1 is not None:
        xs = np.linspace(-radius, radius, n_probe)
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        bad = vol(tt, xx) ** 2 > c1 + c2 * xx ** 2
        if np.any(bad):
            k = np.argwhere(bad)[0]
            return GrowthCertificate(False, c1, c2, (float(tt[tuple(k)]), float(xx[tuple(k)])))
        return GrowthCertificate(True, c1, c2, note="lattice")
    ratios, points = [], []
    for k in range(4):
        xs = np.linspace(-radius * 2 ** k, radius * 2 ** k, n_probe)
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        with np.errstate(over="ignore"):
            r = vol(tt, xx) ** 2 / (1 + xx ** 2)
        idx = np.unravel_index(np.argmax(r), r.shape)
        ratios.append(float(r[idx]))
        points.append((float(tt[idx]), float(xx[idx])))
    growth = [b / a if a > 0 else math.inf for a, b in zip(ratios, ratios[1:])]
    if not np.isfinite(ratios[-1]) or growth[-1] > 4.0:
        return GrowthCertificate(False, math.nan, math.nan, points[-1],
                                 note=f"sigma^2/(1+x^2) grows by {growth[-1]:.3g} per box doubling")
    M = max(ratios)
    return GrowthCertificate(True, M, M, note="lattice")


@dataclass(frozen=True)
class ContinuityProbe:
    radii: tuple
    constants: tuple
    unbounded: bool

    @property
    def L(self):
        return self.constants[0]


def assumption_c_probe(func, omega=None, radius=1.0, T=1.0, n_t=9, n_u=41, nested=3):
    """Estimate ``L(delta)`` in ``|f(x) - f(y)| <= L(delta) omega(|x - y|)``.

    Points ``(t, u)`` of a lattice with ``t + |u| <= delta`` (the closed
    ball of the L1 metric) are compared pairwise, for ``delta`` in
    ``radius * 2**k``. ``unbounded`` is set when the estimate more than
    squares between the last two boxes, which is evidence, not proof, of
    failing local continuity.
    """
    omega = omega or (lambda d: d)
    radii, consts = [], []
    for k in range(nested):
        R = radius * 2 ** k
        ts = np.linspace(0.0, min(T, R), n_t)
        us = np.linspace(-R, R, n_u)
        tt, uu = [a.ravel() for a in np.meshgrid(ts, us, indexing="ij")]
        keep = tt + np.abs(uu) <= R * (1 + 1e-12)
        tt, uu = tt[keep], uu[keep]
        vals = np.asarray(func(tt, uu), float)
        d = np.abs(tt[:, None] - tt[None, :]) + np.abs(uu[:, None] - uu[None, :])
        dv = np.abs(vals[:, None] - vals[None, :])
        mask = d > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = dv[mask] / np.asarray(omega(d[mask]), float)
        radii.append(R)
        consts.append(float(np.max(ratio)) if ratio.size else 0.0)
    unbounded = len(consts) > 1 and consts[-2] > 1 and consts[-1] > consts[-2] ** 2
    return ContinuityProbe(tuple(radii), tuple(consts), bool(unbounded))
