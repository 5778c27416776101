"""Composite Gauss-Legendre rules graded toward singular endpoints.

Volterra kernels blow up algebraically (sometimes with logarithmic factors)
at the diagonal and, for the Molchan-Golosov family, at the origin. A
geometric mesh refined toward such a point together with a fixed-order
Gauss rule on every panel converges exponentially in the number of panels
for integrands of the form ``|u - e|^a * smooth(u)`` with ``a > -1``.
"""

from functools import lru_cache

import numpy as np

DEFAULT_ORDER = 16
DEFAULT_LEVELS = 28
DEFAULT_RATIO = 0.2


@lru_cache(maxsize=32)
def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    # map to [0, 1]
    return 0.5 * (x + 1.0), 0.5 * w


def _graded_breaks(length, levels, ratio):
    """Panel edges on [0, length] refined geometrically toward 0."""
    k = np.arange(levels + 1)
    edges = length * ratio ** k
    return np.concatenate(([0.0], edges[::-1]))


def graded_nodes(a, b, left=True, right=True, order=DEFAULT_ORDER,
                 levels=DEFAULT_LEVELS, ratio=DEFAULT_RATIO):
    """Return nodes and weights for integrating over ``[a, b]``.

    Panels are refined toward ``a`` when ``left`` is set and toward ``b``
    when ``right`` is set. The innermost panel of each refined side is
    kept (it carries a vanishing share of the integral for integrable
    singularities).
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    x, w = _gauss_legendre(order)
    if left and right:
        mid = 0.5 * (a + b)
        n1, w1 = graded_nodes(a, mid, True, False, order, levels, ratio)
        n2, w2 = graded_nodes(mid, b, False, True, order, levels, ratio)
        return np.concatenate((n1, n2)), np.concatenate((w1, w2))
    if not left and not right:
        # a few equal panels are enough for smooth integrands
        edges = np.linspace(a, b, 5)
    else:
        rel = _graded_breaks(b - a, levels, ratio)
        edges = a + rel if left else b - rel[::-1]
    lo = edges[:-1, None]
    h = np.diff(edges)[:, None]
    nodes = (lo + h * x[None, :]).ravel()
    weights = (h * w[None, :]).ravel()
    return nodes, weights


def graded_quad(func, a, b, left=True, right=True, order=DEFAULT_ORDER,
                levels=DEFAULT_LEVELS, ratio=DEFAULT_RATIO):
    """Integrate a vectorized ``func`` over ``[a, b]`` on a graded mesh."""
    nodes, weights = graded_nodes(a, b, left, right, order, levels, ratio)
    if nodes.size == 0:
        return 0.0
    return float(np.dot(func(nodes), weights))
