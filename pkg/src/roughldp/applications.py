"""Asymptotic rates for barrier options, exit times and calls."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy.optimize import minimize

from .gaussian import Grid
from .model import ModelError, sublinear_growth_check
from .rates import SolverOptions, it_hat_rate, it_rate, weights_for, zero_cost_terminal

KINDS = ("up_in", "up_out", "down_in", "down_out")
PENALTIES = (1e2, 1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class BarrierSpec:
    K: float
    kind: str
    G: float = 1.0
    r: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"barrier kind must be one of {KINDS}, got {self.kind!r}")
        if not self.K > 0 or not self.G > 0 or not self.r >= 0:
            raise ValueError("barrier needs K > 0, G > 0 and r >= 0")

    @property
    def up(self):
        return self.kind.startswith("up")


@dataclass
class AsymptoticReport:
    """Rate ``L`` with ``eps log V(eps) -> -L`` plus where it is attained.

    ``profile`` lists ``(t*, I_{t*})`` for in-kind barriers and
    ``(x, I_hat(x))`` for calls.
    """

    rate: float
    argmin: float = math.nan
    branch: str = ""
    profile: list = field(default_factory=list, repr=False)
    verdict: str = "ok"
    certificate: object = None
    diagnostics: dict = field(default_factory=dict, repr=False)


def _constant_drift(model):
    r = model.drift.constant_rate
    if r is None:
        raise ModelError("barrier and call rates need a constant drift b(t, u) = r")
    return r


def _check_orientation(model, barrier):
    s0 = model.s0
    if barrier.up and not s0 < barrier.K:
        raise ModelError(f"up barrier needs s0 < K, got s0={s0:g}, K={barrier.K:g}")
    if not barrier.up and not barrier.K < s0:
        raise ModelError(f"down barrier needs K < s0, got s0={s0:g}, K={barrier.K:g}")


def _in_rate(model, m, opts):
    """Minimum over grid hitting times ``t*`` of ``I_{t*}(m)``."""
    grid = Grid(model.T, opts.n)
    profile, results = [], []
    for j in range(1, grid.n + 1):
        res = it_rate(m, model, opts, steps=j)
        profile.append((float(grid.times[j]), res.value))
        results.append(res)
    vals = np.array([p[1] for p in profile])
    k = int(np.argmin(vals))
    diag = {"converged": all(r.converged for r in results),
            "starts_agreeing": results[k].starts_agreeing}
    return AsymptoticReport(float(vals[k]), profile[k][0], "hitting_time_scan",
                            profile, diagnostics=diag)


class _OutPenalty:
    """Action of ``(fdot, ldot)`` plus a quadratic hinge on barrier crossing."""

    def __init__(self, model, m, up, grid):
        self.model, self.m, self.sgn, self.dt = model, m, 1.0 if up else -1.0, grid.dt
        self.n = grid.n
        self.A = weights_for(model.kernel, grid)[:-1]
        self.t = grid.times[:-1]
        self.mu = 1.0

    def path(self, z):
        n, m = self.n, self.model
        fd, ld = z[:n], z[n:]
        u = self.A @ fd
        b, s = m.drift(self.t, u), m.volatility(self.t, u)
        incr = (b + s * (m.rho * fd + m.rho_bar * ld)) * self.dt
        return np.cumsum(incr), u, b, s

    def action(self, z):
        return 0.5 * float(z @ z) * self.dt

    def value_and_grad(self, z):
        n, m, dt = self.n, self.model, self.dt
        fd, ld = z[:n], z[n:]
        g, u, b, s = self.path(z)
        over = np.maximum(0.0, self.sgn * (g - self.m))
        v = 2 * self.mu * over * self.sgn
        c = np.cumsum(v[::-1])[::-1]  # c[i] = sum_{j >= i} v[j]; g[j] includes incr[i<=j]
        db, ds = m.drift.du(self.t, u), m.volatility.du(self.t, u)
        grad_l = c * s * m.rho_bar * dt + ld * dt
        grad_f = c * s * m.rho * dt + self.A.T @ (c * (db + ds * (m.rho * fd + m.rho_bar * ld)) * dt) + fd * dt
        val = self.action(z) + self.mu * float(over @ over)
        return val, np.concatenate([grad_f, grad_l])


def _out_rate(model, m, up, opts):
    grid = Grid(model.T, opts.n)
    zero = np.cumsum(model.drift(grid.times[:-1], np.zeros(grid.n))) * grid.dt
    inside = np.all(zero < m) if up else np.all(zero > m)
    if inside:
        return AsymptoticReport(0.0, math.nan, "zero_cost_path_inside")
    if not model.volatility.strictly_positive:
        raise ModelError("out-kind penalty solve needs a strictly positive volatility")
    pen = _OutPenalty(model, m, up, grid)
    z = np.zeros(2 * grid.n)
    iters = []
    for mu in PENALTIES:
        pen.mu = mu
        res = minimize(pen.value_and_grad, z, jac=True, method="L-BFGS-B",
                       options={"maxiter": 50 * opts.maxiter, "gtol": opts.tol * mu,
                                "ftol": 1e-15})
        z = res.x
        iters.append(int(res.nit))
    g = pen.path(z)[0]
    violation = float(np.max(pen.sgn * (g - m)))
    return AsymptoticReport(pen.action(z), math.nan, "penalty",
                            diagnostics={"max_violation": violation, "iterations": iters,
                                         "penalty": PENALTIES[-1]})


def barrier_rate(model, barrier, opts=SolverOptions()):
    """``L`` for a binary barrier option of kind ``barrier.kind``.

    In-kinds scan the hitting time over the grid; out-kinds return 0 when
    the zero-cost path stays on the allowed side and otherwise solve a
    penalized problem with penalty continuation.
    """
    _constant_drift(model)
    _check_orientation(model, barrier)
    if not model.volatility.strictly_positive:
        raise ModelError("barrier rates need a strictly positive volatility")
    m = math.log(barrier.K) - model.x0
    if barrier.kind.endswith("_in"):
        return _in_rate(model, m, opts)
    return _out_rate(model, m, barrier.up, opts)


def exit_time_rate(model, level, opts=SolverOptions()):
    """Rate of exiting ``(-inf, level)`` by ``T``; ``level`` is a log-price.

    Shares its computation with the up-and-in barrier at ``K = exp(level)``.
    """
    if level <= model.x0:
        return AsymptoticReport(0.0, 0.0, "at_boundary")
    return barrier_rate(model, BarrierSpec(math.exp(level), "up_in"), opts)


def _x_grid(x_b, x_star, n_x, upper=True):
    sgn = 1.0 if upper else -1.0
    d = max(abs(x_b), sgn * (x_b - x_star))
    return x_b + sgn * d * np.concatenate([[0.0], np.geomspace(1e-3, 1.0, n_x - 1)])


def terminal_tail_rate(model, threshold, opts=SolverOptions(), upper=True, n_x=12):
    """``inf I_hat_T(x)`` over ``x >= threshold`` (``x <= threshold`` if not ``upper``).

    Zero when the zero-cost terminal value lies in the half-line; otherwise
    the infimum is taken over a geometric grid starting at the threshold.
    """
    x_star = zero_cost_terminal(model, Grid(model.T, opts.n))
    if (threshold <= x_star) if upper else (threshold >= x_star):
        return AsymptoticReport(0.0, x_star, "zero_cost_inside")
    profile, results = [], []
    for x in _x_grid(threshold, x_star, n_x, upper):
        res = it_hat_rate(float(x), model, opts)
        profile.append((float(x), res.value))
        results.append(res)
    vals = np.array([p[1] for p in profile])
    k = int(np.argmin(vals))
    nondecreasing = bool(np.all(np.diff(vals) >= -1e-9 * np.maximum(1.0, vals[:-1])))
    diag = {"converged": all(r.converged for r in results),
            "starts_agreeing": results[k].starts_agreeing,
            "nondecreasing": nondecreasing}
    return AsymptoticReport(float(vals[k]), profile[k][0], results[k].branch, profile,
                            diagnostics=diag)


def binary_call_rate(model, K, opts=SolverOptions(), n_x=12):
    """``inf_{x >= log K - x0} I_hat_T(x)`` for an out-of-the-money strike."""
    r = _constant_drift(model)
    if not K > model.s0 * math.exp(r * model.T):
        raise ModelError(f"strike {K:g} is not out of the money: needs K > s0 e^(rT) = "
                         f"{model.s0 * math.exp(r * model.T):g}")
    return terminal_tail_rate(model, math.log(K) - model.x0, opts, True, n_x)


def call_rate(model, K, opts=SolverOptions(), n_x=12):
    """Same rate as :func:`binary_call_rate`, with a growth certificate.

    When the sublinear growth check fails a ``RuntimeWarning`` is issued and
    the verdict is ``"warning"``; the rate is still returned.
    """
    cert = sublinear_growth_check(model.volatility, T=model.T)
    rep = binary_call_rate(model, K, opts, n_x)
    rep.certificate = cert
    if not cert.holds:
        warnings.warn(f"sublinear growth not certified for {model.volatility.family} "
                      f"volatility ({cert.note})", RuntimeWarning, stacklevel=2)
        rep.verdict = "warning"
    return rep
