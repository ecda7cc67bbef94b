"""Spectral estimation of the elevation reflectivity profile.

Two estimators are provided: a Tikhonov regularised inversion computed through
the SVD of the sensing matrix, and an L1 regularised (compressive sensing)
inversion solved by accelerated proximal gradient. Both accept a single
measurement vector of shape ``(N,)`` or a batch of shape ``(N, B)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import lasso_batch
from .geometry import ElevationGrid, SensingMatrix
from .scatterers import ScattererSpec

log = logging.getLogger(__name__)


class InversionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    sigma_eps2: float
    structure: str = "white"

    def __post_init__(self):
        if not self.sigma_eps2 > 0:
            raise InversionError("noise power must be positive")
        if self.structure != "white":
            raise InversionError(f"unsupported noise structure {self.structure!r}")


@dataclass(frozen=True)
class ReflectivityProfile:
    grid: ElevationGrid
    values: np.ndarray
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if self.values.shape[0] != len(self.grid):
            raise InversionError("profile length does not match the grid")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def _check_finite(g):
    if not np.all(np.isfinite(g)):
        raise InversionError("measurements contain non-finite values")


def estimate_noise_power(psi, mu, sigma2, floor: float = 1e-6) -> NoiseModel:
    """White noise power from non-local estimates of one pixel.

    ``mu`` and ``sigma2`` hold the per-acquisition coherence and variance.
    The coherent part of an interferogram has power 2*sigma2*mu and the
    decorrelated part 2*sigma2*(1 - mu).
    """
    mu = np.clip(np.asarray(mu, dtype=float), 0.0, 1.0)
    sigma2 = np.asarray(sigma2, dtype=float)
    noise = float(np.mean(2 * sigma2 * (1 - mu)))
    signal = float(np.mean(2 * sigma2 * mu))
    lower = floor * max(signal, np.finfo(float).tiny)
    return NoiseModel(max(noise, lower))


def noise_power_map(mu, sigma2, floor: float = 1e-6) -> np.ndarray:
    """Vectorised form of :func:`estimate_noise_power` over ``(N, ...)`` planes."""
    mu = np.clip(mu, 0.0, 1.0)
    noise = np.mean(2 * sigma2 * (1 - mu), axis=0)
    signal = np.mean(2 * sigma2 * mu, axis=0)
    return np.maximum(noise, floor * np.maximum(signal, np.finfo(float).tiny))


def interferogram_from_estimates(psi, mu, sigma2):
    """Complex interferogram E{g2 g1*} implied by (psi, mu, sigma2)."""
    return 2 * sigma2 * mu * np.exp(1j * psi)


# --------------------------------------------------------------------------
# Tikhonov / SVD
# --------------------------------------------------------------------------

def svd_solve(g, R: SensingMatrix, sigma_eps2, prior_power=1.0) -> np.ndarray:
    """Batched Tikhonov solution via the SVD of R.

    Solves (R^H R / s2 + I / p)^-1 R^H g / s2 with white prior covariance
    ``p * I``. ``sigma_eps2`` and ``prior_power`` may be scalars or one value
    per column of ``g``.
    """
    g = np.asarray(g, dtype=complex)
    _check_finite(g)
    single = g.ndim == 1
    G = g[:, None] if single else g
    s2 = np.broadcast_to(np.asarray(sigma_eps2, dtype=float), (G.shape[1],))
    p = np.broadcast_to(np.asarray(prior_power, dtype=float), (G.shape[1],))
    if np.any(~np.isfinite(s2)) or np.any(s2 < 0):
        raise InversionError("noise power must be finite and non-negative")
    if np.any(~(p > 0)) or np.any(~np.isfinite(p)):
        raise InversionError("prior power must be finite and positive")
    U, s, Vh = np.linalg.svd(R.entries, full_matrices=False)
    filt = s[:, None] / (s[:, None] ** 2 + (s2 / p)[None, :])
    X = Vh.conj().T @ (filt * (U.conj().T @ G))
    return X[:, 0] if single else X


def svd_invert(g, R: SensingMatrix, noise: NoiseModel, prior_power: float = 1.0) -> ReflectivityProfile:
    return ReflectivityProfile(R.grid, svd_solve(g, R, noise.sigma_eps2, prior_power))


def scene_prior_power(signal_power: float, R: SensingMatrix) -> float:
    """White prior whose total power over the grid equals ``signal_power``."""
    return float(signal_power) / R.shape[1]


# --------------------------------------------------------------------------
# L1 / compressive sensing
# --------------------------------------------------------------------------

def lipschitz_constant(R: SensingMatrix, tol: float = 1e-12, max_iter: int = 1000) -> float:
    """Largest eigenvalue of R^H R by power iteration on the N x N matrix R R^H."""
    A = R.entries @ R.entries.conj().T
    v = np.ones(A.shape[0], dtype=complex) / math.sqrt(A.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        new = float(np.linalg.norm(w))
        if new == 0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


def soft_threshold(z, tau):
    mag = np.abs(z)
    scale = np.maximum(1.0 - tau / np.maximum(mag, np.finfo(float).tiny), 0.0)
    return z * scale


def lasso_objective(X, G, A, lam):
    """0.5 * ||A X - G||^2 + lam * ||X||_1, column-wise."""
    r = A @ X - G
    return 0.5 * np.sum(np.abs(r) ** 2, axis=0) + lam * np.sum(np.abs(X), axis=0)


@dataclass
class LassoResult:
    X: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def cs_solve(g, R: SensingMatrix, lam, tol: float = 1e-8, max_iter: int = 5000,
             x0=None, kkt_tol: float | None = None) -> LassoResult:
    """Batched complex lasso, min 0.5*||R X - g||^2 + lam*||X||_1.

    Monotone FISTA with momentum restart and step 1/||R^H R||. A column stops
    when a plain proximal step lowers its objective by less than ``tol``
    (relative) or after ``max_iter`` iterations. With ``kkt_tol`` set, columns
    whose optimality residual still exceeds it keep iterating from where they
    stopped (objective changes near rounding level say little about the
    residual on coherent dictionaries) until it is met or ``max_iter`` is spent.
    """
    g = np.asarray(g, dtype=complex)
    _check_finite(g)
    single = g.ndim == 1
    G = g[:, None] if single else g
    B = G.shape[1]
    lam = np.ascontiguousarray(np.broadcast_to(np.asarray(lam, dtype=float), (B,)))
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise InversionError("lambda must be finite and non-negative")
    A = R.entries
    L = A.shape[1]
    lip = lipschitz_constant(R)
    if lip <= 0:
        raise InversionError("sensing matrix is zero")
    if x0 is None:
        X0 = np.zeros((L, B), dtype=complex)
    else:
        X0 = np.asarray(x0, dtype=complex).reshape(L, B)
    Xr = np.ascontiguousarray(X0.real)
    Xi = np.ascontiguousarray(X0.imag)
    F, iters, conv = lasso_batch(
        np.ascontiguousarray(A.real), np.ascontiguousarray(A.imag),
        np.ascontiguousarray(G.real), np.ascontiguousarray(G.imag),
        lam, 1.0 / lip, float(tol), int(max_iter), Xr, Xi)
    X = Xr + 1j * Xi
    if kkt_tol is not None:
        chunk = 2000
        bad = kkt_residual_batch(X, G, R, lam) > kkt_tol
        live = bad & (iters < max_iter)
        while np.any(live):
            idx = np.flatnonzero(live)
            sr = np.ascontiguousarray(X[:, idx].real)
            si = np.ascontiguousarray(X[:, idx].imag)
            n_it = int(min(chunk, (max_iter - iters[idx]).min()))
            F[idx], more, _ = lasso_batch(
                np.ascontiguousarray(A.real), np.ascontiguousarray(A.imag),
                np.ascontiguousarray(G[:, idx].real), np.ascontiguousarray(G[:, idx].imag),
                np.ascontiguousarray(lam[idx]), 1.0 / lip, 0.0, n_it, sr, si)
            iters[idx] += more
            X[:, idx] = sr + 1j * si
            bad = kkt_residual_batch(X, G, R, lam) > kkt_tol
            live = bad & (iters < max_iter)
        conv = ~bad
    if not np.all(conv):
        log.debug("lasso: %d of %d columns hit max_iter", int(np.sum(~conv)), B)
    if single:
        X = X[:, 0]
    return LassoResult(X, F, iters, conv)


def default_lambda(g, R: SensingMatrix, fraction: float = 0.15):
    """``fraction`` of the kill threshold max_l |(R^H g)_l|."""
    return fraction * np.max(np.abs(R.entries.conj().T @ np.asarray(g, dtype=complex)), axis=0)


def cs_invert(g, R: SensingMatrix, lam: float | None = None, **kwargs) -> ReflectivityProfile:
    if lam is None:
        lam = float(default_lambda(g, R))
    res = cs_solve(g, R, lam, **kwargs)
    if not res.converged[0]:
        log.warning("cs_invert did not converge in %d iterations", res.iterations[0])
    return ReflectivityProfile(R.grid, res.X, bool(res.converged[0]), int(res.iterations[0]))


def kkt_residual_batch(X, G, R: SensingMatrix, lam) -> np.ndarray:
    """Per-column largest violation of the lasso optimality conditions."""
    X = np.asarray(X).reshape(R.entries.shape[1], -1)
    C = R.entries.conj().T @ (np.asarray(G).reshape(R.entries.shape[0], -1) - R.entries @ X)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (X.shape[1],))
    mag = np.abs(X)
    on = mag > 0
    off = np.where(on, 0.0, np.maximum(np.abs(C) - lam, 0.0))
    unit = np.divide(X, mag, out=np.zeros_like(X), where=on)
    onv = np.where(on, np.abs(C - lam * unit), 0.0)
    return np.maximum(off.max(axis=0), onv.max(axis=0))


def kkt_residual(X, g, R: SensingMatrix, lam: float) -> float:
    """Largest violation of the lasso optimality conditions."""
    X = np.asarray(X)
    c = R.entries.conj().T @ (np.asarray(g) - R.entries @ X)
    on = np.abs(X) > 0
    viol_off = np.max(np.maximum(np.abs(c[~on]) - lam, 0.0), initial=0.0)
    if np.any(on):
        viol_on = np.max(np.abs(c[on] - lam * X[on] / np.abs(X[on])))
    else:
        viol_on = 0.0
    return float(max(viol_off, viol_on))


# --------------------------------------------------------------------------
# Peak extraction
# --------------------------------------------------------------------------

def find_peaks_batch(values, k_max: int):
    """Top ``k_max`` local maxima of ``|values|`` along axis 0.

    Returns ``(index, offset, count)`` where ``index`` is ``(B, k_max)`` integer
    bins (-1 for missing), ``offset`` the parabolic sub-bin correction and
    ``count`` the number of peaks found per column.
    """
    mag = np.abs(np.asarray(values))
    if mag.ndim == 1:
        mag = mag[:, None]
    L, B = mag.shape
    # grid end points never count as peaks: they are usually the flank of a
    # lobe centred outside the grid
    left = np.full_like(mag, np.inf)
    left[1:] = mag[:-1]
    right = np.full_like(mag, np.inf)
    right[:-1] = mag[1:]
    is_peak = (mag > left) & (mag >= right) & (mag > 0)
    score = np.where(is_peak, mag, -np.inf)
    k = min(k_max, L)
    order = np.argsort(-score, axis=0, kind="stable")[:k].T
    top = np.take_along_axis(score.T, order, axis=1)
    valid = np.isfinite(top)
    index = np.where(valid, order, -1)
    count = valid.sum(axis=1)

    idx = np.clip(index, 0, L - 1)
    cols = np.arange(B)[:, None]
    y0 = mag[idx, cols]
    ym = np.where(idx > 0, mag[np.clip(idx - 1, 0, L - 1), cols], np.nan)
    yp = np.where(idx < L - 1, mag[np.clip(idx + 1, 0, L - 1), cols], np.nan)
    den = ym - 2 * y0 + yp
    with np.errstate(invalid="ignore", divide="ignore"):
        offset = 0.5 * (ym - yp) / den
    offset = np.where(np.isfinite(offset) & (den < 0), np.clip(offset, -0.5, 0.5), 0.0)
    offset = np.where(valid, offset, 0.0)
    return index, offset, count


def extract_peaks(profile: ReflectivityProfile, k_max: int) -> list[ScattererSpec]:
    """Up to ``k_max`` local maxima of the profile magnitude, strongest first."""
    if k_max < 1:
        raise InversionError("k_max must be >= 1")
    index, offset, count = find_peaks_batch(profile.values, k_max)
    grid = profile.grid.samples
    step = profile.grid.spacing
    out = []
    for i, d in zip(index[0, : count[0]], offset[0, : count[0]]):
        v = profile.values[i]
        out.append(ScattererSpec(float(grid[i] + d * step), float(abs(v)), float(np.angle(v))))
    return out


# --------------------------------------------------------------------------
# Two-stage routing
# --------------------------------------------------------------------------

def multi_peak_mask(values, ratio: float = 3.0) -> np.ndarray:
    """Columns whose profile has more than one significant peak.

    A peak is significant when its magnitude is at least ``ratio`` times the
    median magnitude of its column.
    """
    mag = np.abs(values)
    if mag.ndim == 1:
        mag = mag[:, None]
    index, _, count = find_peaks_batch(mag, 2)
    med = np.median(mag, axis=0)
    cols = np.arange(mag.shape[1])
    second = np.where(count >= 2, mag[np.clip(index[:, 1], 0, None), cols], 0.0)
    return second >= ratio * med


def invert_batch(G, R: SensingMatrix, estimator: str, sigma_eps2=None, lambda_frac: float = 0.15,
                 peak_ratio: float = 3.0, prior_power=1.0, **cs_kwargs) -> np.ndarray:
    """Profiles for a batch of measurement vectors with the chosen estimator.

    ``estimator`` is one of ``svd``, ``cs`` or ``two-stage``. The two-stage
    route runs the SVD everywhere and re-solves columns with several
    significant peaks by L1 minimisation.
    """
    G = np.asarray(G, dtype=complex)
    if estimator not in ("svd", "cs", "two-stage"):
        raise InversionError(f"unknown estimator {estimator!r}")
    if estimator == "cs":
        lam = default_lambda(G, R, lambda_frac)
        return cs_solve(G, R, lam, **cs_kwargs).X
    if sigma_eps2 is None:
        raise InversionError("svd estimator needs a noise power")
    X = svd_solve(G, R, sigma_eps2, prior_power)
    if estimator == "two-stage":
        route = multi_peak_mask(X, peak_ratio)
        if np.any(route):
            Gs = G[:, route]
            X[:, route] = cs_solve(Gs, R, default_lambda(Gs, R, lambda_frac), **cs_kwargs).X
    return X
