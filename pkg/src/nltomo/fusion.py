"""Robust M-estimation of heights from neighbouring elevation estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import AcquisitionGeometry

MAD_SCALE = 1.4826


@dataclass(frozen=True)
class FusionParams:
    weight_family: str = "tukey"      # or "t-dist"
    c_r: float = 4.685
    neighborhood_radius: int = 3
    max_irls_iters: int = 100
    scale_estimator: str = "MAD"
    nu: float = 3.0                   # degrees of freedom of the t weights

    def __post_init__(self):
        if self.weight_family not in ("tukey", "t-dist"):
            raise ValueError("weight_family must be 'tukey' or 't-dist'")
        if not self.c_r > 0:
            raise ValueError("c_r must be positive")
        if self.neighborhood_radius < 1:
            raise ValueError("neighborhood_radius must be >= 1")
        if self.scale_estimator != "MAD":
            raise ValueError("only the MAD scale estimator is available")


@dataclass(frozen=True)
class FusionResult:
    value: float
    iterations: int
    converged: bool
    scale: float
    fallback: bool = False


def tukey_rho(x, c_r: float = 4.685):
    """Biweight loss, constant c_r^2/6 beyond |x| = c_r."""
    if not c_r > 0:
        raise ValueError("c_r must be positive")
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < c_r
    c2 = c_r * c_r
    return np.where(inside, -((c2 - x * x) ** 3) / (6 * c2 * c2) + c2 / 6, c2 / 6)


def tukey_weight(x, c_r: float = 4.685):
    """rho'(x)/x = (1 - x^2/c^2)^2 inside the cut-off, 0 outside."""
    if not c_r > 0:
        raise ValueError("c_r must be positive")
    x = np.asarray(x, dtype=float)
    u = 1.0 - (x / c_r) ** 2
    return np.where(np.abs(x) < c_r, u * u, 0.0)


def t_weight(x, nu: float = 3.0):
    """Student-t IRLS weight (nu + 1) / (nu + x^2)."""
    x = np.asarray(x, dtype=float)
    return (nu + 1) / (nu + x * x)


def mad_scale(samples) -> float:
    s = np.asarray(samples, dtype=float)
    return MAD_SCALE * float(np.median(np.abs(s - np.median(s))))


def m_estimate(samples, params: FusionParams = FusionParams(), tol: float = 1e-6) -> FusionResult:
    """IRLS location estimate started at the median.

    Residuals are divided by the MAD scale (times 1.4826) of the samples
    before the weight function is applied. A zero scale means more than half
    the samples coincide; their common value is returned.
    """
    s = np.asarray(samples, dtype=float).ravel()
    s = s[np.isfinite(s)]
    if s.size == 0:
        raise ValueError("no finite samples")
    med = float(np.median(s))
    scale = mad_scale(s)
    if scale == 0 or s.size == 1:
        return FusionResult(med, 0, True, scale)
    wf = (lambda x: tukey_weight(x, params.c_r)) if params.weight_family == "tukey" else \
        (lambda x: t_weight(x, params.nu))
    est = med
    for it in range(1, params.max_irls_iters + 1):
        w = wf((s - est) / scale)
        sw = float(w.sum())
        if sw <= 0:
            return FusionResult(med, it, False, scale, fallback=True)
        new = float(np.dot(w, s) / sw)
        if abs(new - est) < tol:
            return FusionResult(new, it, True, scale)
        est = new
    return FusionResult(est, params.max_irls_iters, False, scale)


def fuse(samples, params: FusionParams = FusionParams()) -> float:
    return m_estimate(samples, params).value


def elevation_to_height(s, geom: AcquisitionGeometry):
    return np.multiply(s, math.sin(geom.incidence_angle))


def disk(radius: int) -> np.ndarray:
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def fuse_image(values, valid, params: FusionParams = FusionParams(), labels=None):
    """Fuse a per-pixel value plane over neighbourhoods.

    With ``labels`` (integer plane, 0 = background) every labelled region is
    fused as one neighbourhood and the result is broadcast over it. Elsewhere
    a disk of ``params.neighborhood_radius`` around each valid pixel is used.
    Returns the fused plane (NaN where no sample was available).
    """
    values = np.asarray(values, dtype=float)
    valid = np.asarray(valid, dtype=bool) & np.isfinite(values)
    out = np.full(values.shape, np.nan)
    done = np.zeros(values.shape, dtype=bool)
    if labels is not None:
        labels = np.asarray(labels)
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            m = labels[sl] == lab
            vals = values[sl][m & valid[sl]]
            if vals.size:
                out[sl][m] = fuse(vals, params)
            done[sl] |= m
    r = params.neighborhood_radius
    fp = disk(r)
    H, W = values.shape
    pad_v = np.pad(np.where(valid, values, np.nan), r, constant_values=np.nan)
    ys, xs = np.nonzero(valid & ~done)
    for y, x in zip(ys, xs):
        win = pad_v[y:y + 2 * r + 1, x:x + 2 * r + 1][fp]
        win = win[np.isfinite(win)]
        out[y, x] = fuse(win, params)
    return out
