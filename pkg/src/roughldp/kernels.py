"""Volterra kernels ``K(t, s)`` and the integrals built from them."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

from .moduli import DomainError, ModulusOfContinuity
from .quadrature import graded_quad

FAMILIES = ("brownian", "molchan_golosov", "riemann_liouville",
            "mv_stationary", "custom")


@dataclass(frozen=True)
class VolterraKernel:
    """A Volterra kernel with the metadata quadrature needs.

    Attributes
    ----------
    family, params, T
        Identification and horizon.
    func
        Vectorized ``K(t, s)`` valid for ``0 < s < t <= T``.
    stationary
        True when ``K(t, s) = tau(t - s)``; then ``tau``, ``eta2``
        (antiderivative of ``tau**2``) and ``tau_primitive``
        (antiderivative of ``tau``) are set.
    diag_exponent
        ``a`` with ``K(t, s) ~ (t - s)**a`` as ``s -> t``.
    origin_exponent
        ``b`` with ``K(t, s) ~ s**b`` as ``s -> 0`` (0 when regular).
    """

    family: str
    params: dict
    T: float
    func: object = field(repr=False)
    stationary: bool = False
    tau: object = field(default=None, repr=False)
    eta2: object = field(default=None, repr=False)
    tau_primitive: object = field(default=None, repr=False)
    diag_exponent: float = 0.0
    origin_exponent: float = 0.0
    modulus: ModulusOfContinuity = field(default=None, repr=False)

    def __call__(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        out = np.zeros(t.shape)
        m = (s < t) & (s > 0)
        if np.any(m):
            out[m] = self.func(t[m], s[m])
        return out

    def describe(self):
        if self.family == "mv_stationary":
            return f"mv_stationary[{self.modulus.describe()}]"
        body = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}({body})" if body else self.family


def _mg_constant(H):
    # normalizing Beta integrals from the Volterra representation of fBM
    if H > 0.5:
        return math.sqrt(H * (2 * H - 1) / special.beta(H - 0.5, 2 - 2 * H))
    return math.sqrt(2 * H / ((1 - 2 * H) * special.beta(H + 0.5, 1 - 2 * H)))


def _mg_func(H):
    c = _mg_constant(H)
    if H < 0.5:
        a, b = 1 - 2 * H, H + 0.5
        bab = special.beta(a, b)

        def func(t, s):
            z = s / t
            first = z ** (0.5 - H) * (t - s) ** (H - 0.5)
            # s^{1/2-H} * int_s^t u^{H-3/2}(u-s)^{H-1/2} du, after u = s/x
            second = s ** (H - 0.5) * bab * special.betaincc(a, b, z)
            return c * (first + (0.5 - H) * second)
    else:
        # J(z) = int_z^1 x^{-2H} (1-x)^{H-3/2} dx
        a, b = 1 - 2 * H, H - 0.5
        bab = special.beta(a, b)  # analytic continuation, a < 0

        def inner(z):
            out = np.empty_like(z)
            near = z >= 0.5
            y = 1 - z[near]
            out[near] = y ** b / b * special.hyp2f1(b, 2 * H, H + 0.5, y)
            zf = z[~near]
            out[~near] = bab - zf ** a / a * special.hyp2f1(a, 1 - b, a + 1, zf)
            return out

        def func(t, s):
            return c * s ** (H - 0.5) * inner(s / t)
    return func


def _stationary(family, params, T, tau, eta2, prim, diag_exp, modulus=None):
    return VolterraKernel(family, params, T, func=lambda t, s: tau(t - s),
                          stationary=True, tau=tau, eta2=eta2,
                          tau_primitive=prim, diag_exponent=diag_exp,
                          modulus=modulus)


def _numeric_primitive(tau):
    def prim(x):
        x = np.atleast_1d(np.asarray(x, float))
        out = np.array([graded_quad(tau, 0.0, xi, left=True, right=False)
                        if xi > 0 else 0.0 for xi in x.ravel()])
        return out.reshape(x.shape)
    return prim


def make_kernel(family, params=None, T=1.0):
    """Build a Volterra kernel.

    Families: ``brownian``; ``molchan_golosov`` (``H`` in (0, 1), the
    fractional Brownian motion kernel; ``H = 1/2`` gives ``brownian``);
    ``riemann_liouville`` (``H > 0``); ``mv_stationary`` (``modulus`` an
    MV-flagged :class:`ModulusOfContinuity`, ``K(t, s) = tau(t - s)`` with
    ``tau**2 = (eta**2)'``); ``custom`` (``func`` callable, optional
    ``diag_exponent`` / ``origin_exponent``).
    """
    params = dict(params or {})
    T = float(T)
    if not T > 0:
        raise DomainError(f"horizon T must be positive, got {T}")

    if family == "brownian":
        one = lambda x: np.ones_like(np.asarray(x, float))
        ident = lambda x: np.clip(np.asarray(x, float), 0.0, None)
        return _stationary("brownian", {}, T, one, ident, ident, 0.0)

    if family == "molchan_golosov":
        H = float(params.get("H", float("nan")))
        if not 0 < H < 1:
            raise DomainError(f"molchan_golosov needs H in (0, 1), got {H}")
        if H == 0.5:
            return make_kernel("brownian", T=T)
        return VolterraKernel("molchan_golosov", {"H": H}, T, func=_mg_func(H),
                              diag_exponent=H - 0.5,
                              origin_exponent=-abs(H - 0.5))

    if family == "riemann_liouville":
        H = float(params.get("H", float("nan")))
        if not H > 0:
            raise DomainError(f"riemann_liouville needs H > 0, got {H}")
        g = special.gamma(H + 0.5)
        tau = lambda x: np.asarray(x, float) ** (H - 0.5) / g
        eta2 = lambda x: np.clip(np.asarray(x, float), 0, None) ** (2 * H) / (2 * H * g * g)
        prim = lambda x: np.clip(np.asarray(x, float), 0, None) ** (H + 0.5) / special.gamma(H + 1.5)
        return _stationary("riemann_liouville", {"H": H}, T, tau, eta2, prim,
                           H - 0.5)

    if family == "mv_stationary":
        mod = params.get("modulus")
        if not isinstance(mod, ModulusOfContinuity):
            raise DomainError("mv_stationary needs a 'modulus' parameter")
        if not mod.mv:
            raise DomainError(
                f"modulus {mod.describe()} does not have a positive "
                "non-increasing (eta^2)'")
        if T > mod.T:
            raise DomainError(f"kernel horizon {T} exceeds modulus domain {mod.T}")
        tau = lambda x: np.sqrt(mod.deta2(x))
        if mod.family == "power":
            H = mod.params["H"]
            k = math.sqrt(2 * H)
            prim = lambda x: k * np.clip(np.asarray(x, float), 0, None) ** (H + 0.5) / (H + 0.5)
            diag = H - 0.5
        else:
            prim = _numeric_primitive(tau)
            diag = -0.5
        return _stationary("mv_stationary", {"modulus": mod.describe()}, T,
                           tau, mod.eta2, prim, diag, modulus=mod)

    if family == "custom":
        func = params.get("func")
        if not callable(func):
            raise DomainError("custom kernel needs a callable 'func'")
        return VolterraKernel("custom", {}, T, func=func,
                              diag_exponent=float(params.get("diag_exponent", 0.0)),
                              origin_exponent=float(params.get("origin_exponent", 0.0)))

    raise DomainError(f"unknown kernel family {family!r}")


def _check_times(kernel, t):
    t = np.asarray(t, float)
    if np.any(t < 0) or np.any(t > kernel.T * (1 + 1e-12)):
        raise DomainError(f"times must lie in [0, {kernel.T}]")
    return t


def variance_function(kernel, times, **quad):
    """``V(t) = int_0^t K(t, s)^2 ds`` at every entry of ``times``."""
    t = _check_times(kernel, times)
    if kernel.stationary:
        return np.asarray(kernel.eta2(t), float)
    out = np.zeros(t.shape)
    for idx, ti in np.ndenumerate(t):
        if ti > 0:
            out[idx] = graded_quad(lambda u: kernel(ti, u) ** 2, 0.0, ti, **quad)
    return out


def covariance(kernel, t, s, **quad):
    """``C(t, s) = int_0^min(t,s) K(t, u) K(s, u) du`` for scalar times."""
    t, s = max(t, s), min(t, s)
    if s <= 0:
        return 0.0
    if kernel.family == "brownian":
        return s
    if t == s:
        if kernel.stationary:
            return float(kernel.eta2(t))
        return graded_quad(lambda u: kernel(t, u) ** 2, 0.0, t, **quad)
    if kernel.stationary:
        lag = t - s
        return graded_quad(lambda v: kernel.tau(v) * kernel.tau(v + lag),
                           0.0, s, left=True, right=True, **quad)
    return graded_quad(lambda u: kernel(t, u) * kernel(s, u), 0.0, s, **quad)


def l2_modulus(kernel, lag, resolution=64, **quad):
    """Grid estimate of ``M_K(lag) = sup_{|t-s|<=lag} int (K(t,u)-K(s,u))^2 du``.

    The supremum runs over pairs of a uniform ``resolution``-step grid with
    lag at most ``lag`` and over the pairs ``(t, t - lag)``.
    """
    lag = float(lag)
    if lag < 0 or lag > kernel.T:
        raise DomainError(f"lag must be in [0, {kernel.T}], got {lag}")
    if lag == 0:
        return 0.0
    times = np.linspace(0.0, kernel.T, resolution + 1)
    var = variance_function(kernel, times, **quad)
    cache = dict(zip(times.tolist(), var.tolist()))

    def metric2(t, s):
        vt = cache.get(t)
        if vt is None:
            vt = float(variance_function(kernel, np.array([t]), **quad)[0])
        vs = cache.get(s)
        if vs is None:
            vs = float(variance_function(kernel, np.array([s]), **quad)[0])
        return max(vt + vs - 2 * covariance(kernel, t, s, **quad), 0.0)

    best = 0.0
    dt = kernel.T / resolution
    for i, t in enumerate(times):
        for j in range(i):
            if t - times[j] > lag + 1e-12 * kernel.T:
                continue
            best = max(best, metric2(t, times[j]))
        if t - lag >= 0 and (lag / dt) % 1 > 1e-9:
            best = max(best, metric2(t, t - lag))
    return best
