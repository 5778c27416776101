"""Moduli of continuity and their classification."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.interpolate import PchipInterpolator

FAMILIES = ("power", "logarithmic", "custom")


class DomainError(ValueError):
    """Raised when a modulus or kernel is requested outside its domain."""


@dataclass(frozen=True)
class ModulusOfContinuity:
    """An increasing function ``eta`` on ``(0, T]`` with ``eta(0+) = 0``.

    ``mv`` records whether ``(eta^2)'`` is positive and non-increasing on
    ``(0, T)``, which is what the stationary kernel construction needs.
    """

    family: str
    params: dict
    T: float
    mv: bool
    _interp: object = field(default=None, repr=False, compare=False)

    def eta2(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power":
            return np.where(x > 0, np.abs(x) ** (2 * self.params["H"]), 0.0)
        if self.family == "logarithmic":
            beta = self.params["beta"]
            xs = np.clip(x, 1e-300, None)
            return np.where(x > 0, (-np.log(xs)) ** (-beta), 0.0)
        return np.exp(2 * self._log_eta(x))

    def _log_eta(self, x):
        # monotone cubic in log-log coordinates; power law below the first knot
        interp, lx1, le1, slope0 = self._interp
        with np.errstate(divide="ignore"):
            lx = np.log(np.clip(x, 0.0, None))
        head = le1 + slope0 * (lx - lx1)
        return np.where(lx < lx1, head, interp(np.maximum(lx, lx1)))

    def eta(self, x):
        return np.sqrt(self.eta2(x))

    def deta2(self, x):
        """Derivative of ``eta^2``; infinite at 0 when the modulus is rough."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "power":
                h2 = 2 * self.params["H"]
                return np.where(x > 0, h2 * np.abs(x) ** (h2 - 1), np.inf)
            if self.family == "logarithmic":
                beta = self.params["beta"]
                xs = np.clip(x, 1e-300, None)
                val = beta / xs * (-np.log(xs)) ** (-beta - 1)
                return np.where(x > 0, val, np.inf)
            interp, lx1, _, slope0 = self._interp
            lx = np.log(np.clip(x, 1e-300, None))
            elas = np.where(lx < lx1, slope0, interp.derivative()(np.maximum(lx, lx1)))
            return np.where(x > 0, 2 * self.eta2(x) * elas / np.clip(x, 1e-300, None), np.inf)

    def __call__(self, x):
        return self.eta(x)

    def describe(self):
        body = ", ".join(f"{k}={v}" for k, v in self.params.items()
                         if k not in ("x", "eta"))
        return f"{self.family}({body}; T={self.T})"


def _check_mv(mod, n_probe=2048):
    lo = max(1e-9 * mod.T, mod.params["x"][1] if mod.family == "custom" else 0.0)
    xs = np.geomspace(lo, mod.T, n_probe)[:-1]
    d = mod.deta2(xs)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        return False
    return bool(np.all(np.diff(d) <= 1e-12 * np.abs(d[:-1])))


def make_modulus(family, params, T):
    """Build a validated modulus of continuity.

    ``family`` is ``"power"`` (``eta(x) = x**H``), ``"logarithmic"``
    (``eta(x) = (-log x)**(-beta/2)``, requires ``T < exp(-beta - 1)``) or
    ``"custom"`` (``params = {"x": [...], "eta": [...]}`` increasing table
    starting at ``(0, 0)``, interpolated by a monotone cubic in log-log
    coordinates and extended as a power law below the first positive knot).
    """
    params = dict(params)
    T = float(T)
    if not T > 0:
        raise DomainError(f"horizon T must be positive, got {T}")
    if family == "power":
        H = float(params.get("H", float("nan")))
        if not 0 < H < 1:
            raise DomainError(f"power modulus needs H in (0, 1), got {H}")
        params = {"H": H}
        mod = ModulusOfContinuity("power", params, T, mv=H <= 0.5)
        return mod
    if family == "logarithmic":
        beta = float(params.get("beta", float("nan")))
        if not beta > 0:
            raise DomainError(f"logarithmic modulus needs beta > 0, got {beta}")
        bound = math.exp(-beta - 1)
        if not T < bound:
            raise DomainError(
                f"logarithmic modulus with beta={beta} needs T < exp(-beta-1)"
                f" = {bound:.6g}, got T={T}")
        return ModulusOfContinuity("logarithmic", {"beta": beta}, T, mv=True)
    if family == "custom":
        x = np.asarray(params.get("x"), dtype=float)
        e = np.asarray(params.get("eta"), dtype=float)
        if x.ndim != 1 or x.shape != e.shape or x.size < 3:
            raise DomainError("custom modulus needs matching x/eta tables")
        if x[0] != 0.0 or e[0] != 0.0:
            raise DomainError("custom modulus table must start at (0, 0)")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(e) <= 0):
            raise DomainError("custom modulus table must be strictly increasing")
        if x[-1] < T:
            raise DomainError(f"custom modulus table ends at {x[-1]} < T={T}")
        lx, le = np.log(x[1:]), np.log(e[1:])
        interp = (PchipInterpolator(lx, le, extrapolate=True), lx[0], le[0],
                  (le[1] - le[0]) / (lx[1] - lx[0]))
        mod = ModulusOfContinuity("custom", {"x": x.tolist(), "eta": e.tolist()},
                                  T, mv=False, _interp=interp)
        return ModulusOfContinuity("custom", mod.params, T, mv=_check_mv(mod),
                                   _interp=interp)
    raise DomainError(f"unknown modulus family {family!r}")


def fernique_classify(mod, u_range=(1e3, 1e6), margin=0.02, log_margin=0.2):
    """Decide whether ``int^inf eta(1/u) (log u)^(-1/2) du/u`` converges.

    Built-in families are classified exactly: power moduli always satisfy
    the condition and the logarithmic modulus satisfies it iff
    ``beta > 1``. For custom tables the integrand is fitted over
    ``u_range`` by ``C u^(-1-a) (log u)^(-b)``; a clear sign of ``a``
    decides, and when ``a`` is within ``margin`` of 0 the log exponent
    ``b`` is compared with 1. Anything within the margins, or a table too
    short to reach ``1/u_range[1]``, yields ``"undecided"``.
    """
    if mod.family == "power":
        return "holds"
    if mod.family == "logarithmic":
        return "holds" if mod.params["beta"] > 1 else "fails"
    lo, hi = u_range
    if 1.0 / hi < mod.params["x"][1] or 1.0 / lo > mod.T:
        return "undecided"
    u = np.geomspace(lo, hi, 64)
    integrand = mod.eta(1.0 / u) * np.log(u) ** -0.5 / u
    if np.any(integrand <= 0):
        return "undecided"
    X = np.column_stack([np.ones_like(u), np.log(u), np.log(np.log(u))])
    coef = np.linalg.lstsq(X, np.log(integrand), rcond=None)[0]
    a, b = -coef[1] - 1, -coef[2]
    if a > margin:
        return "holds"
    if a < -margin:
        return "fails"
    if b > 1 + log_margin:
        return "holds"
    if b < 1 - log_margin:
        return "fails"
    return "undecided"
