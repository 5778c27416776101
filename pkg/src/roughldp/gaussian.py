"""Covariance assembly, path sampling and the canonical metric."""

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy.signal import fftconvolve

from . import rng as _rng
from .kernels import covariance, variance_function
from .quadrature import graded_quad

PIVOT_TOL = 1e-10


class IndefiniteCovarianceError(np.linalg.LinAlgError):
    """Covariance is not PSD within tolerance; refine the quadrature."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = i T / n``, ``i = 0..n``."""

    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"grid horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs n >= 2 steps, got {self.n}")

    @property
    def dt(self):
        return self.T / self.n

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n + 1)


@dataclass(frozen=True)
class CovarianceMatrix:
    grid: Grid
    matrix: np.ndarray = field(repr=False)
    quad_order: int = 16
    kernel: str = ""


@dataclass
class PathEnsemble:
    """Paths on a grid; ``values`` has shape ``(n_paths, n + 1)``.

    ``increments`` holds the driving Brownian increments ``dB`` (shape
    ``(n_paths, n)``) when the scheme exposes them.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)
    seed: int = 0
    scheme: str = ""
    kernel: str = ""
    increments: np.ndarray = field(default=None, repr=False)
    flags: tuple = ()

    @property
    def n_paths(self):
        return self.values.shape[0]


def _check_psd(mat, tol=PIVOT_TOL):
    scale = max(float(np.max(np.diag(mat))), np.finfo(float).tiny)
    lam_min = float(np.linalg.eigvalsh(mat)[0])
    if lam_min < -tol * scale:
        raise IndefiniteCovarianceError(
            f"covariance has eigenvalue {lam_min:.3e} below -{tol:g} * max "
            f"diagonal ({scale:.3e}); increase the quadrature order")
    return scale


def covariance_matrix(kernel, grid, quad_order=16, workers=1):
    """Covariance of ``B_hat`` on ``grid`` by singular-aware quadrature."""
    if grid.T > kernel.T * (1 + 1e-12):
        raise ValueError(f"grid horizon {grid.T} exceeds kernel domain {kernel.T}")
    t = grid.times
    n = grid.n
    mat = np.zeros((n + 1, n + 1))
    if kernel.family == "brownian":
        mat = np.minimum.outer(t, t)
    else:
        diag = variance_function(kernel, t, order=quad_order)

        def row(i):
            out = np.empty(i)
            for j in range(1, i):
                out[j] = covariance(kernel, t[i], t[j], order=quad_order)
            return out

        rows = _rng.map_blocks(lambda i: row(i), [(i,) for i in range(n + 1)],
                               workers)
        for i in range(1, n + 1):
            mat[i, 1:i] = rows[i][1:]
        mat = mat + mat.T
        mat[np.diag_indices(n + 1)] = diag
        mat[0, :] = mat[:, 0] = 0.0
    _check_psd(mat[1:, 1:])
    return CovarianceMatrix(grid, mat, quad_order, kernel.describe())


def _factor(mat, tol=PIVOT_TOL):
    """Lower factor ``L`` with ``L L^T = mat`` for a PSD matrix."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        _check_psd(mat, tol)
    # semidefinite within tolerance: symmetric square root, no clipping of
    # anything beyond the pivot tolerance
    lam, vec = np.linalg.eigh(mat)
    lam = np.clip(lam, 0.0, None)
    return vec * np.sqrt(lam)


def sample_cholesky(cov, n_paths, seed, workers=1, block_size=_rng.DEFAULT_BLOCK):
    """Exact Gaussian paths with covariance ``cov`` (``B_hat_0 = 0``)."""
    inner = cov.matrix[1:, 1:]
    if np.max(np.diag(inner)) <= 0:
        raise IndefiniteCovarianceError("covariance is identically zero")
    L = _factor(inner)
    n = cov.grid.n

    def block(b, start, stop):
        z = _rng.stream(seed, _rng.VOL_DRIVER, b).standard_normal((stop - start, n))
        return z @ L.T

    parts = _rng.map_blocks(block, _rng.block_ranges(n_paths, block_size), workers)
    vals = np.zeros((n_paths, n + 1))
    if parts:
        vals[:, 1:] = np.vstack(parts)
    return PathEnsemble(cov.grid, vals, seed, "cholesky", cov.kernel)


def cell_weights(kernel, grid, order=12, levels=14):
    """``W[j, i] = int_{t_i}^{t_{i+1}} K(t_j, u) du`` for ``i < j``.

    Shape ``(n + 1, n)``; row 0 is zero. Stationary kernels with a known
    primitive of ``tau`` are integrated exactly.
    """
    n, dt = grid.n, grid.dt
    t = grid.times
    W = np.zeros((n + 1, n))
    if kernel.stationary and kernel.tau_primitive is not None:
        A = np.asarray(kernel.tau_primitive(np.arange(n + 1) * dt), float)
        cell = np.diff(A)  # cell[k] = int_{k dt}^{(k+1) dt} tau
        j, i = np.tril_indices(n + 1, -1, n)
        W[j, i] = cell[j - i - 1]
        return W
    quad = dict(order=order, levels=levels)
    for j in range(1, n + 1):
        for i in range(j):
            left = i == 0 and kernel.origin_exponent < 0
            right = i == j - 1
            W[j, i] = graded_quad(lambda u: kernel(t[j], u), t[i], t[i + 1],
                                  left=left, right=right, **quad)
    return W


def convolution_weights(kernel, grid):
    """Weights ``w`` with ``B_hat_j = sum_{i<j} w[j, i] dB_i``.

    For stationary kernels a vector ``w[k]`` for lag ``k = j - i - 1`` chosen
    so each cell contributes exactly ``int tau^2`` over it; otherwise the
    cell-averaged kernel matrix.
    """
    dt = grid.dt
    if kernel.stationary:
        e = np.asarray(kernel.eta2(np.arange(grid.n + 1) * dt), float)
        e[0] = 0.0
        return np.sqrt(np.clip(np.diff(e), 0.0, None) / dt), False
    return cell_weights(kernel, grid) / dt, True


def sample_convolution(kernel, grid, n_paths, seed, workers=1,
                       block_size=_rng.DEFAULT_BLOCK):
    """Discretized Wiener integral ``B_hat_t = int_0^t K(t, s) dB_s``.

    Returns the ensemble with the driving increments attached. Non-stationary
    kernels fall back to cell-averaged weights and set the
    ``"cell_average_fallback"`` flag.
    """
    w, fallback = convolution_weights(kernel, grid)
    if fallback:
        warnings.warn(f"kernel {kernel.describe()} is not stationary; using "
                      "cell-averaged weights", RuntimeWarning, stacklevel=2)
    n = grid.n
    sq = np.sqrt(grid.dt)

    def block(b, start, stop):
        dB = _rng.stream(seed, _rng.VOL_DRIVER, b).standard_normal((stop - start, n)) * sq
        return dB, apply_weights(w, dB)

    parts = _rng.map_blocks(block, _rng.block_ranges(n_paths, block_size), workers)
    vals = np.zeros((n_paths, n + 1))
    dB = np.zeros((n_paths, n))
    if parts:
        dB[:] = np.vstack([p[0] for p in parts])
        vals[:, 1:] = np.vstack([p[1] for p in parts])
    flags = ("cell_average_fallback",) if fallback else ()
    return PathEnsemble(grid, vals, seed, "convolution", kernel.describe(),
                        increments=dB, flags=flags)


def apply_weights(w, dB):
    """``B_hat_j`` for ``j = 1..n`` given increments ``dB`` (rows = paths)."""
    n = dB.shape[1]
    if w.ndim == 1:
        if n <= 128:
            T = np.zeros((n, n))
            j, i = np.tril_indices(n)
            T[j, i] = w[j - i]
            return dB @ T.T
        return fftconvolve(dB, w[None, :], axes=1)[:, :n]
    return dB @ w[1:].T


def canonical_metric(cov):
    """``delta(t_i, t_j) = sqrt(C_ii + C_jj - 2 C_ij)`` (clamped at 0)."""
    C = cov.matrix if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    d = np.diag(C)
    return np.sqrt(np.clip(d[:, None] + d[None, :] - 2 * C, 0.0, None))


@dataclass(frozen=True)
class SandwichReport:
    max_lower_violation: float
    max_upper_violation: float
    lower_pair: tuple
    upper_pair: tuple
    n_violations: int
    slack: float
    n_pairs: int

    @property
    def ok(self):
        return self.n_violations == 0


def metric_sandwich_report(delta, modulus, grid, slack=0.02, min_lag_steps=2):
    """Check ``eta(|t-s|) <= delta(t, s) <= 2 eta(|t-s|)`` on grid pairs.

    Violations are relative (``(eta - delta)/eta`` and
    ``(delta - 2 eta)/(2 eta)``); pairs closer than ``min_lag_steps`` grid
    steps are skipped.
    """
    t = grid.times
    i, j = np.triu_indices(len(t), min_lag_steps)
    lag = t[j] - t[i]
    eta = np.asarray(modulus.eta(lag), float)
    d = np.asarray(delta)[i, j]
    low = (eta - d) / eta
    high = (d - 2 * eta) / (2 * eta)
    lo_k, hi_k = int(np.argmax(low)), int(np.argmax(high))
    n_bad = int(np.count_nonzero((low > slack) | (high > slack)))
    return SandwichReport(float(low[lo_k]), float(high[hi_k]),
                          (float(t[i[lo_k]]), float(t[j[lo_k]])),
                          (float(t[i[hi_k]]), float(t[j[hi_k]])),
                          n_bad, slack, int(i.size))
