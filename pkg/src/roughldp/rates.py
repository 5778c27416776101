"""Discretized variational rate functions.

Paths in the Cameron-Martin space are represented by a piecewise-constant
derivative ``fdot`` on the cells of a uniform grid. The kernel-smoothed path
``f_hat`` is the linear map ``W @ fdot`` with cell weights
``W[j, i] = int_{t_i}^{t_{i+1}} K(t_j, u) du``, and drift and volatility are
evaluated at the left end of every cell.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import minimize

from . import rng as _rng
from .gaussian import Grid, cell_weights
from .model import ModelError

LAMBDA_FLOOR = 1e-12
TIKHONOV = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    """Knobs shared by the variational solvers.

    ``n`` is the grid size used when the solver builds its own grid;
    ``n_starts`` random Gaussian starts of scale ``start_scale`` are tried
    in addition to the zero start.
    """

    n: int = 64
    tol: float = 1e-8
    maxiter: int = 500
    n_starts: int = 8
    start_scale: float = 1.0
    seed: int = 0
    agree_rtol: float = 0.01
    workers: int = 1
    residual_tol: float = 1e-6


@dataclass(frozen=True)
class DiscretePath:
    """Path with derivative ``fdot[i]`` on cell ``i``; ``f(0) = 0``."""

    grid: Grid
    fdot: np.ndarray = field(repr=False)

    def __post_init__(self):
        fd = np.asarray(self.fdot, float)
        if fd.shape != (self.grid.n,):
            raise ValueError(f"fdot must have {self.grid.n} entries, got {fd.shape}")
        object.__setattr__(self, "fdot", fd)

    @classmethod
    def from_values(cls, grid, values):
        """Piecewise-linear interpolant of ``values``; needs ``values[0] == 0``."""
        v = np.asarray(values, float)
        if v.shape != (grid.n + 1,):
            raise ValueError(f"values must have {grid.n + 1} entries, got {v.shape}")
        if v[0] != 0:
            raise ValueError("path must start at 0")
        return cls(grid, np.diff(v) / grid.dt)

    @property
    def values(self):
        out = np.zeros(self.grid.n + 1)
        np.cumsum(self.fdot * self.grid.dt, out=out[1:])
        return out

    @property
    def energy(self):
        return 0.5 * float(np.sum(self.fdot ** 2)) * self.grid.dt


@dataclass(frozen=True)
class VolterraHat:
    grid: Grid
    values: np.ndarray = field(repr=False)


@dataclass
class RateResult:
    """Outcome of a variational problem.

    ``value`` is the minimum over all starts; ``diagnostics`` carries
    per-start values, iteration counts and the final gradient norm.
    """

    value: float
    fdot: np.ndarray = field(default=None, repr=False)
    converged: bool = True
    starts_agreeing: int = 1
    branch: str = ""
    flags: tuple = ()
    diagnostics: dict = field(default_factory=dict, repr=False)


_W_CACHE = {}


def weights_for(kernel, grid):
    """Cell-weight matrix, cached per kernel instance and grid."""
    key = (id(kernel), grid)
    hit = _W_CACHE.get(key)
    if hit is None or hit[0] is not kernel:
        if len(_W_CACHE) > 64:
            _W_CACHE.clear()
        hit = _W_CACHE[key] = (kernel, cell_weights(kernel, grid))
    return hit[1]


def volterra_hat(path, kernel, W=None):
    """``f_hat(t_j) = sum_{i<j} W[j, i] fdot[i]``."""
    if W is None:
        W = weights_for(kernel, path.grid)
    return VolterraHat(path.grid, W @ path.fdot)


# --- objectives ----------------------------------------------------------------

class _Coeffs:
    """``b``, ``sigma`` and their ``u``-derivatives along ``f_hat``."""

    def __init__(self, model, t, A):
        self.model, self.t, self.A = model, t, A

    def __call__(self, fd):
        u = self.A @ fd
        m = self.model
        return (m.drift(self.t, u), m.drift.du(self.t, u),
                m.volatility(self.t, u), m.volatility.du(self.t, u))


class TerminalObjective:
    """``Lambda(x, f) / 2 + energy`` on the first ``j`` cells.

    ``Lambda = N^2 / D`` with ``N = x - sum (b + rho sigma fdot) dt`` and
    ``D = rho_bar^2 sum sigma^2 dt``.
    """

    def __init__(self, x, model, W, dt, j=None):
        j = W.shape[1] if j is None else j
        self.x, self.model, self.dt, self.j = float(x), model, dt, j
        self.A = W[:j, :j]
        self.coef = _Coeffs(model, np.arange(j) * dt, self.A)

    def parts(self, fd):
        b, db, s, ds = self.coef(fd)
        rho, dt = self.model.rho, self.dt
        N = self.x - float(np.sum(b + rho * s * fd)) * dt
        D = self.model.rho_bar ** 2 * float(np.sum(s * s)) * dt
        return N, D, (b, db, s, ds)

    def value(self, fd):
        N, D, _ = self.parts(fd)
        return 0.5 * N * N / max(D, LAMBDA_FLOOR) + 0.5 * float(fd @ fd) * self.dt

    def value_and_grad(self, fd):
        N, D, (b, db, s, ds) = self.parts(fd)
        rho, dt = self.model.rho, self.dt
        Df = max(D, LAMBDA_FLOOR)
        dN = -(rho * s * dt + self.A.T @ ((db + rho * ds * fd) * dt))
        dD = self.model.rho_bar ** 2 * (self.A.T @ (2 * s * ds * dt)) if D > LAMBDA_FLOOR else 0.0
        val = 0.5 * N * N / Df + 0.5 * float(fd @ fd) * dt
        grad = (N / Df) * dN - 0.5 * N * N / Df ** 2 * dD + fd * dt
        return val, grad


class PathObjective:
    """Discrete sample-path action for a target path with derivative ``gdot``."""

    def __init__(self, gdot, model, W, dt):
        self.gdot, self.model, self.dt = np.asarray(gdot, float), model, dt
        n = self.gdot.size
        self.A = W[:n, :n]
        self.coef = _Coeffs(model, np.arange(n) * dt, self.A)

    def _resid(self, fd):
        b, db, s, ds = self.coef(fd)
        if np.any(s <= 0):
            raise ModelError("volatility must be strictly positive along the path")
        rb, rho = self.model.rho_bar, self.model.rho
        r = (self.gdot - b - rho * s * fd) / (rb * s)
        # d/du of (gdot - b) / (rho_bar sigma)
        h = (-db * s - (self.gdot - b) * ds) / (rb * s * s)
        return r, h

    def value(self, fd):
        r, _ = self._resid(fd)
        return 0.5 * float(r @ r) * self.dt + 0.5 * float(fd @ fd) * self.dt

    def value_and_grad(self, fd):
        r, h = self._resid(fd)
        dt, m = self.dt, self.model
        val = 0.5 * float(r @ r) * dt + 0.5 * float(fd @ fd) * dt
        grad = dt * (-(m.rho / m.rho_bar) * r + self.A.T @ (r * h)) + fd * dt
        return val, grad


def central_difference(func, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        g[k] = (func(x + e) - func(x - e)) / (2 * e[k])
    return g


def _multistart(obj, dim, opts, include_zero=True):
    gen = _rng.stream(opts.seed, _rng.OPTIMIZER_STARTS, 0)
    starts = [np.zeros(dim)] if include_zero else []
    starts += [opts.start_scale * gen.standard_normal(dim) for _ in range(opts.n_starts)]

    def run(x0):
        res = minimize(obj.value_and_grad, x0, jac=True, method="BFGS",
                       options={"gtol": opts.tol, "maxiter": opts.maxiter})
        gnorm = float(np.linalg.norm(res.jac)) if res.jac is not None else math.nan
        return float(res.fun), res.x, int(res.nit), gnorm, bool(gnorm < opts.tol or res.success)

    outs = _rng.map_blocks(run, [(s,) for s in starts], opts.workers)
    vals = np.array([o[0] for o in outs])
    k = int(np.nanargmin(vals))
    best = vals[k]
    agree = int(np.sum(vals <= best + opts.agree_rtol * abs(best) + 1e-12))
    flags = ()
    conv = [o[4] for o in outs]
    if any(c and v > best * (1 + opts.agree_rtol) + 1e-10 for c, v in zip(conv, vals)):
        flags = ("multistart_disagreement",)
    diag = {"start_values": vals.tolist(), "iterations": [o[2] for o in outs],
            "grad_norm": outs[k][3], "n_starts": len(starts)}
    return RateResult(max(float(best), 0.0), outs[k][1], outs[k][4], agree,
                      flags=flags, diagnostics=diag)


def _grid(model, opts):
    return Grid(model.T, opts.n)


def _require_positive(model):
    if not model.volatility.strictly_positive:
        raise ModelError(f"volatility {model.volatility.family} is not strictly "
                         "positive; use it_hat_rate")


def qt_rate(g, model, opts=SolverOptions()):
    """Sample-path rate of the log-price for a strictly positive volatility.

    ``g`` is a :class:`DiscretePath` or an array of path values on
    ``Grid(model.T, opts.n)``. Values that do not start at 0 lie outside the
    Cameron-Martin space and get rate ``inf``.
    """
    _require_positive(model)
    if not isinstance(g, DiscretePath):
        v = np.asarray(g, float)
        grid = _grid(model, opts)
        if v.shape == (grid.n + 1,) and v[0] != 0:
            return RateResult(math.inf, None, True, 0, flags=("not_in_cameron_martin",))
        g = DiscretePath.from_values(grid, v)
    W = weights_for(model.kernel, g.grid)
    obj = PathObjective(g.fdot, model, W, g.grid.dt)
    res = _multistart(obj, g.grid.n, opts)
    res.branch = "L2"
    return res


def it_rate(x, model, opts=SolverOptions(), steps=None):
    """Terminal-value rate for a strictly positive volatility.

    With ``steps = j`` the horizon is ``t_j`` of ``Grid(model.T, opts.n)``.
    """
    _require_positive(model)
    grid = _grid(model, opts)
    W = weights_for(model.kernel, grid)
    obj = TerminalObjective(x, model, W, grid.dt, steps)
    res = _multistart(obj, obj.j, opts)
    res.branch = "L2"
    return res


@dataclass(frozen=True)
class LambdaValue:
    value: float
    l1_proximal: bool


def lambda_xf(x, path, model, W=None):
    """``Lambda(x, f)``; the denominator is floored and the floor flagged."""
    if W is None:
        W = weights_for(model.kernel, path.grid)
    obj = TerminalObjective(x, model, W, path.grid.dt)
    N, D, _ = obj.parts(path.fdot)
    return LambdaValue(N * N / max(D, LAMBDA_FLOOR), D < LAMBDA_FLOOR)


def zero_cost_terminal(model, grid, steps=None):
    """``sum_i b(t_i, 0) dt``: terminal value of the zero-cost path."""
    j = grid.n if steps is None else steps
    t = grid.times[:j]
    return float(np.sum(model.drift(t, np.zeros(j)))) * grid.dt


def it_hat_rate(x, model, opts=SolverOptions(), steps=None):
    """Terminal rate for a volatility that may vanish on ``{u = 0}``.

    Strictly positive volatilities reduce to :func:`it_rate`. When
    ``sigma(t, 0) = 0`` the zero path reaches only ``x = int b(s, 0) ds``,
    which is then free (branch ``"L1"``); every other ``x`` is handled by
    minimizing ``(Lambda + int fdot^2) / 2`` from random starts only.
    """
    zs = model.volatility.zero_set
    if zs == "empty":
        return it_rate(x, model, opts, steps)
    if zs != "u=0":
        raise ModelError(f"unsupported volatility zero set {zs!r}")
    grid = _grid(model, opts)
    j = grid.n if steps is None else steps
    x_star = zero_cost_terminal(model, grid, j)
    if abs(x - x_star) <= 1e-12 * max(1.0, abs(x)):
        return RateResult(0.0, np.zeros(j), True, 1, branch="L1")
    W = weights_for(model.kernel, grid)
    obj = TerminalObjective(x, model, W, grid.dt, j)
    res = _multistart(obj, j, opts, include_zero=False)
    res.branch = "L2"
    return res


def j_rate(g, kernel, opts=SolverOptions()):
    """Rate of ``sqrt(eps) B_hat`` at the discrete path ``g``.

    Least-norm solution of ``W fdot = g`` with Tikhonov regularization; if the
    relative residual exceeds ``opts.residual_tol`` the rate is ``inf``.
    """
    grid = g.grid
    v = g.values if isinstance(g, (DiscretePath, VolterraHat)) else np.asarray(g, float)
    if v[0] != 0:
        return RateResult(math.inf, None, True, 0, flags=("not_in_cameron_martin",))
    W = weights_for(kernel, grid)[1:]
    rhs = v[1:]
    n = grid.n
    A = np.vstack([W, math.sqrt(TIKHONOV) * np.eye(n)])
    fd = np.linalg.lstsq(A, np.concatenate([rhs, np.zeros(n)]), rcond=None)[0]
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    resid = float(np.max(np.abs(W @ fd - rhs))) / scale if np.any(rhs) else 0.0
    diag = {"residual": resid}
    if resid > opts.residual_tol:
        return RateResult(math.inf, fd, False, 1, flags=("residual_above_tol",), diagnostics=diag)
    return RateResult(0.5 * float(fd @ fd) * grid.dt, fd, True, 1, diagnostics=diag)


def rate_scan(xs, model, opts=SolverOptions(), solver=None):
    """Evaluate a terminal rate on every ``x``; one :class:`RateResult` each."""
    solver = solver or (it_rate if model.volatility.strictly_positive else it_hat_rate)
    return [solver(float(x), model, opts) for x in xs]
