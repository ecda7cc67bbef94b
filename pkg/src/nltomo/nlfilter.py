"""Patch-wise non-local weighted maximum-likelihood filtering of bistatic interferograms."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_EPS_REL = 1e-12


class FilterError(ValueError):
    pass


class EmptyNeighborhoodError(FilterError):
    pass


class SingularCoherenceError(FilterError):
    pass


@dataclass
class InterferometricStack:
    """Complex master/slave planes of N bistatic pairs, shape (N, rows, cols).

    Rows run along azimuth, columns along range.
    """

    g1: np.ndarray
    g2: np.ndarray
    pixel_spacing: tuple[float, float] = (2.17, 1.36)

    def __post_init__(self):
        self.g1 = np.asarray(self.g1, dtype=complex)
        self.g2 = np.asarray(self.g2, dtype=complex)
        if self.g1.ndim == 2:
            self.g1 = self.g1[None]
            self.g2 = self.g2[None]
        if self.g1.ndim != 3 or self.g1.shape != self.g2.shape:
            raise FilterError("g1 and g2 must share shape (N, rows, cols)")
        if not (np.all(np.isfinite(self.g1)) and np.all(np.isfinite(self.g2))):
            raise FilterError("stack contains non-finite samples")

    @property
    def n(self) -> int:
        return self.g1.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.g1.shape[1:]

    @property
    def i1(self):
        return np.abs(self.g1) ** 2

    @property
    def i2(self):
        return np.abs(self.g2) ** 2

    @property
    def phi(self):
        """Interferometric phase arg(g2 g1*)."""
        return np.angle(self.g2 * np.conj(self.g1))

    @classmethod
    def from_triplets(cls, i1, i2, phi, pixel_spacing=(2.17, 1.36)) -> "InterferometricStack":
        """Build from intensities and phase with a zero master phase."""
        g1 = np.sqrt(np.asarray(i1, dtype=float)).astype(complex)
        g2 = np.sqrt(np.asarray(i2, dtype=float)) * np.exp(1j * np.asarray(phi, dtype=float))
        return cls(g1, g2, pixel_spacing)


@dataclass
class FilteredInterferogram:
    psi: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    effective_looks: np.ndarray
    quality: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.quality is None:
            self.quality = np.isfinite(self.psi) & (self.sigma2 > 0)

    @property
    def interferogram(self):
        """Filtered complex interferogram 2 sigma2 mu exp(j psi)."""
        return 2 * self.sigma2 * self.mu * np.exp(1j * self.psi)


@dataclass(frozen=True)
class FilterParams:
    patch: int = 7
    search: int = 21
    bandwidth: float | None = None    # None: calibrated on a pure-noise tile
    gamma: float = 1.0
    coherence: str = "modulus"        # or "amplitude"
    weights: str = "single"           # or "joint": one weight map from the stack-mean score

    def __post_init__(self):
        if self.patch < 1 or self.patch % 2 == 0 or self.search < 1 or self.search % 2 == 0:
            raise FilterError("patch and search sizes must be odd and positive")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise FilterError("bandwidth must be positive")
        if self.coherence not in ("modulus", "amplitude"):
            raise FilterError("coherence must be 'modulus' or 'amplitude'")
        if self.weights not in ("single", "joint"):
            raise FilterError("weights must be 'single' or 'joint'")


# --------------------------------------------------------------------------
# Likelihood
# --------------------------------------------------------------------------

def goodman_loglik(i1, i2, phi, psi, mu, sigma2):
    """Log of the joint density of two speckle intensities and their phase difference.

    Normalized over (i1, i2, phi) with phi on a 2*pi interval: the prefactor
    is 1 / (8 pi sigma2^2 (1 - mu^2)). The 1 / (16 pi^2 ...) form is the
    density over both absolute phases; the two differ by the constant 2 pi,
    which does not move the maximum.
    """
    i1, i2, phi, psi, mu, sigma2 = np.broadcast_arrays(*map(np.asarray, (i1, i2, phi, psi, mu, sigma2)))
    if np.any(mu >= 1):
        raise SingularCoherenceError("coherence must be < 1")
    if np.any(mu < 0) or np.any(sigma2 <= 0) or np.any(i1 < 0) or np.any(i2 < 0):
        raise FilterError("need 0 <= mu < 1, sigma2 > 0 and non-negative intensities")
    q = 1.0 - mu * mu
    num = i1 + i2 - 2 * np.sqrt(i1 * i2) * mu * np.cos(phi - psi)
    return -np.log(8 * math.pi * sigma2 ** 2 * q) - num / (2 * sigma2 * q)


# --------------------------------------------------------------------------
# Patch dissimilarity
# --------------------------------------------------------------------------

def _pixel_terms(i1a, i2a, ca, sa, i1b, i2b, cb, sb, gamma):
    """Per-pixel dissimilarity of two (I1, I2, phi) samples; phases given as cos/sin."""
    d = (2 * np.log(i1a + i1b) - np.log(i1a) - np.log(i1b)
         + 2 * np.log(i2a + i2b) - np.log(i2a) - np.log(i2b) - 4 * math.log(2.0))
    return d + gamma * (1.0 - (ca * cb + sa * sb))


def _planes(g1, g2):
    """Regularized intensities and phase cos/sin of one interferogram."""
    i1 = np.abs(g1) ** 2
    i2 = np.abs(g2) ** 2
    i1 = i1 + _EPS_REL * max(float(i1.mean()), 1e-300)
    i2 = i2 + _EPS_REL * max(float(i2.mean()), 1e-300)
    ph = np.angle(g2 * np.conj(g1))
    return i1, i2, np.cos(ph), np.sin(ph)


def patch_dissimilarity(stack: InterferometricStack, pixel_a, pixel_b, patch_size: int = 7,
                        gamma: float = 1.0, acquisition: int = 0) -> float:
    """Dissimilarity of the patches centred on two pixels, summed over the patch.

    Patch pixels that fall outside the image on either side are dropped and
    the mean over the remaining pairs is scaled back to the full patch area.
    """
    i1, i2, c, s = _planes(stack.g1[acquisition], stack.g2[acquisition])
    H, W = i1.shape
    r = patch_size // 2
    (ya, xa), (yb, xb) = pixel_a, pixel_b
    total = 0.0
    count = 0
    for u in range(-r, r + 1):
        for v in range(-r, r + 1):
            pa = (ya + u, xa + v)
            pb = (yb + u, xb + v)
            if not (0 <= pa[0] < H and 0 <= pa[1] < W and 0 <= pb[0] < H and 0 <= pb[1] < W):
                continue
            total += float(_pixel_terms(i1[pa], i2[pa], c[pa], s[pa], i1[pb], i2[pb], c[pb], s[pb], gamma))
            count += 1
    if count == 0:
        return math.inf
    return total / count * patch_size ** 2


# --------------------------------------------------------------------------
# Vectorized weights and estimation
# --------------------------------------------------------------------------

def _shifted(a, pad, dy, dx, H, W):
    return a[pad + dy: pad + dy + H, pad + dx: pad + dx + W]


def _offset_dissimilarity(planes_p, valid_p, pad, dy, dx, H, W, patch, gamma):
    """Patch dissimilarity of every pixel with its neighbour at (dy, dx)."""
    i1, i2, c, s = (p[pad:pad + H, pad:pad + W] for p in planes_p)
    j1, j2, cb, sb = (_shifted(p, pad, dy, dx, H, W) for p in planes_p)
    ok = _shifted(valid_p, pad, dy, dx, H, W)
    d = np.where(ok, _pixel_terms(i1, i2, c, s, j1, j2, cb, sb, gamma), 0.0)
    okf = ok.astype(float)
    num = ndimage.uniform_filter(d, patch, mode="constant")
    den = ndimage.uniform_filter(okf, patch, mode="constant")
    with np.errstate(invalid="ignore", divide="ignore"):
        D = np.where(den > 1e-9, num / den * patch * patch, np.inf)
    return np.where(ok, D, np.inf)


def _pad_planes(g1, g2, pad):
    planes = _planes(g1, g2)
    H, W = g1.shape
    valid = np.zeros((H + 2 * pad, W + 2 * pad), dtype=bool)
    valid[pad:pad + H, pad:pad + W] = True
    # edge padding keeps the logs finite; padded pixels are masked out
    padded = [np.pad(p, pad, mode="edge") for p in planes]
    return padded, valid


def _filter_one(g1, g2, params: FilterParams, h: float):
    H, W = g1.shape
    R = params.search // 2
    pad = R
    planes_p, valid_p = _pad_planes(g1, g2, pad)
    cross = g1 * np.conj(g2)
    amp = np.abs(g1) * np.abs(g2)
    pw = np.abs(g1) ** 2 + np.abs(g2) ** 2
    cross_p = np.pad(cross, pad)
    amp_p = np.pad(amp, pad)
    pw_p = np.pad(pw, pad)

    s_cross = np.zeros((H, W), dtype=complex)
    s_amp = np.zeros((H, W))
    s_pw = np.zeros((H, W))
    s_w = np.zeros((H, W))
    w_max = np.zeros((H, W))
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            if dy == 0 and dx == 0:
                continue
            D = _offset_dissimilarity(planes_p, valid_p, pad, dy, dx, H, W, params.patch, params.gamma)
            w = np.exp(-D / h)
            s_cross += w * _shifted(cross_p, pad, dy, dx, H, W)
            s_amp += w * _shifted(amp_p, pad, dy, dx, H, W)
            s_pw += w * _shifted(pw_p, pad, dy, dx, H, W)
            s_w += w
            np.maximum(w_max, w, out=w_max)
    # centre pixel takes the largest weight of its candidates (1 if none is left)
    w0 = np.where(w_max > 0, w_max, 1.0)
    s_cross += w0 * cross
    s_amp += w0 * amp
    s_pw += w0 * pw
    s_w += w0
    return _estimates(s_cross, s_amp, s_pw, s_w, w0, params.coherence)


def _filter_joint(g1s, g2s, params: FilterParams, h: float):
    """All interferograms share weights from their mean patch dissimilarity."""
    N, H, W = g1s.shape
    R = params.search // 2
    pad = R
    padded = [_pad_planes(a, b, pad) for a, b in zip(g1s, g2s)]
    cross = g1s * np.conj(g2s)
    amp = np.abs(g1s) * np.abs(g2s)
    pw = np.abs(g1s) ** 2 + np.abs(g2s) ** 2
    cross_p = [np.pad(c, pad) for c in cross]
    amp_p = [np.pad(a, pad) for a in amp]
    pw_p = [np.pad(p, pad) for p in pw]
    s_cross = np.zeros((N, H, W), dtype=complex)
    s_amp = np.zeros((N, H, W))
    s_pw = np.zeros((N, H, W))
    s_w = np.zeros((H, W))
    w_max = np.zeros((H, W))
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            if dy == 0 and dx == 0:
                continue
            D = sum(_offset_dissimilarity(pp, vp, pad, dy, dx, H, W, params.patch, params.gamma)
                    for pp, vp in padded) / N
            w = np.exp(-D / h)
            for n in range(N):
                s_cross[n] += w * _shifted(cross_p[n], pad, dy, dx, H, W)
                s_amp[n] += w * _shifted(amp_p[n], pad, dy, dx, H, W)
                s_pw[n] += w * _shifted(pw_p[n], pad, dy, dx, H, W)
            s_w += w
            np.maximum(w_max, w, out=w_max)
    w0 = np.where(w_max > 0, w_max, 1.0)
    s_w += w0
    out = []
    for n in range(N):
        out.append(_estimates(s_cross[n] + w0 * cross[n], s_amp[n] + w0 * amp[n],
                              s_pw[n] + w0 * pw[n], s_w, w0, params.coherence))
    return out


def _estimates(s_cross, s_amp, s_pw, s_w, w_top, coherence):
    """Estimates from weighted sums; looks are sum(w) with the top weight scaled to 1."""
    psi = -np.angle(s_cross)
    with np.errstate(invalid="ignore", divide="ignore"):
        num = 2 * (np.abs(s_cross) if coherence == "modulus" else s_amp)
        mu = np.where(s_pw > 0, num / s_pw, 0.0)
        sigma2 = s_pw / (4 * s_w)
        looks = s_w / w_top
    mu = np.clip(mu, 0.0, 1.0)
    return FilteredInterferogram(psi, mu, sigma2, looks)


def nl_weights(stack: InterferometricStack, center, search_size: int = 21, patch_size: int = 7,
               h: float | None = None, gamma: float = 1.0, acquisition: int = 0) -> np.ndarray:
    """Weights of the search window around ``center``; NaN outside the image."""
    if search_size % 2 == 0 or patch_size % 2 == 0:
        raise FilterError("window sizes must be odd")
    if h is None:
        h = calibrate_bandwidth(patch_size, gamma)
    if not h > 0:
        raise FilterError("bandwidth must be positive")
    H, W = stack.shape
    yc, xc = center
    R = search_size // 2
    out = np.full((search_size, search_size), np.nan)
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            y, x = yc + dy, xc + dx
            if (dy, dx) == (0, 0) or not (0 <= y < H and 0 <= x < W):
                continue
            d = patch_dissimilarity(stack, (yc, xc), (y, x), patch_size, gamma, acquisition)
            out[dy + R, dx + R] = math.exp(-d / h)
    others = out[np.isfinite(out)]
    wmax = float(others.max()) if others.size else 0.0
    out[R, R] = wmax if wmax > 0 else 1.0
    return out


def wmle_estimate(g1, g2, weights, coherence: str = "modulus"):
    """Weighted ML estimate (psi, mu, sigma2) from neighbourhood samples.

    ``g1``, ``g2`` and ``weights`` are arrays of matching shape; NaN weights
    are ignored.
    """
    w = np.asarray(weights, dtype=float)
    g1 = np.asarray(g1, dtype=complex)
    g2 = np.asarray(g2, dtype=complex)
    m = np.isfinite(w)
    w, g1, g2 = w[m], g1[m], g2[m]
    if np.any(w < 0):
        raise FilterError("weights must be non-negative")
    sw = float(np.sum(w))
    if not sw > 0:
        raise EmptyNeighborhoodError("all weights are zero")
    s_cross = np.sum(w * g1 * np.conj(g2))
    s_amp = np.sum(w * np.abs(g1) * np.abs(g2))
    s_pw = np.sum(w * (np.abs(g1) ** 2 + np.abs(g2) ** 2))
    psi = float(-np.angle(s_cross))
    num = 2 * (abs(s_cross) if coherence == "modulus" else s_amp)
    mu = float(np.clip(num / s_pw, 0.0, 1.0)) if s_pw > 0 else 0.0
    return psi, mu, float(s_pw / (4 * sw))


# --------------------------------------------------------------------------
# Bandwidth calibration
# --------------------------------------------------------------------------

def calibration_dissimilarities(patch_size: int = 7, gamma: float = 1.0, tile: int = 48,
                                seed: int = 12345, n_average: int = 1) -> np.ndarray:
    """Patch dissimilarities between pixels of a pure-noise tile.

    The tile holds independent unit-power circular Gaussian master and slave
    samples. The score is scale free in the intensities, so the result serves
    every scene with the same patch size and phase weight. With
    ``n_average > 1`` the score is the mean over that many independent
    tiles, matching the joint weighting of a stack.
    """
    rng = np.random.default_rng(seed)
    shape = (tile, tile)
    H, W = shape
    R = 5
    r = patch_size // 2
    inner = (slice(r, H - r), slice(r, W - r))
    acc = None
    for _ in range(n_average):
        g1 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
        g2 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
        planes_p, valid_p = _pad_planes(g1, g2, R)
        vals = []
        for dy in range(-R, R + 1):
            for dx in range(-R, R + 1):
                if dy == 0 and dx == 0:
                    continue
                vals.append(_offset_dissimilarity(planes_p, valid_p, R, dy, dx, H, W, patch_size,
                                                  gamma)[inner].ravel())
        v = np.concatenate(vals)
        acc = v if acc is None else acc + v
    D = acc / n_average
    return D[np.isfinite(D)]


@functools.lru_cache(maxsize=32)
def calibrate_bandwidth(patch_size: int = 7, gamma: float = 1.0, percentile: float = 30.0,
                        floor_percentile: float | None = 1.0, n_average: int = 1) -> float:
    """Filter bandwidth from the pure-noise dissimilarity distribution.

    Returns the ``percentile`` of the dissimilarity in excess of the tile's
    ``floor_percentile`` (its noise floor). Shifting every score by a
    constant leaves the estimates unchanged, because weights are normalized
    and the centre pixel takes the largest weight; only the spread of the
    scores sets the selectivity. ``floor_percentile=None`` gives the raw
    percentile, which is nearly non-selective (about 438 of 441 looks on a
    homogeneous 21x21 window).
    """
    D = calibration_dissimilarities(patch_size, gamma, n_average=n_average)
    floor = np.percentile(D, floor_percentile) if floor_percentile is not None else 0.0
    return float(np.percentile(D, percentile) - floor)


# --------------------------------------------------------------------------
# Whole-stack filtering
# --------------------------------------------------------------------------

def filter_interferogram(g1, g2, params: FilterParams = FilterParams()) -> FilteredInterferogram:
    g1 = np.asarray(g1, dtype=complex)
    g2 = np.asarray(g2, dtype=complex)
    if g1.ndim != 2 or g1.shape != g2.shape:
        raise FilterError("expected two planes of equal 2-D shape")
    h = params.bandwidth if params.bandwidth is not None else calibrate_bandwidth(params.patch, params.gamma)
    return _filter_one(g1, g2, params, h)


def filter_stack(stack: InterferometricStack, params: FilterParams = FilterParams(),
                 threads: int = 1) -> list[FilteredInterferogram]:
    """Filter every interferogram of the stack independently."""
    H, W = stack.shape
    if min(H, W) < params.search:
        raise FilterError(f"image {H}x{W} is smaller than the {params.search}x{params.search} search window")
    if params.weights == "joint":
        h = params.bandwidth if params.bandwidth is not None else \
            calibrate_bandwidth(params.patch, params.gamma, n_average=stack.n)
        return _filter_joint(stack.g1, stack.g2, params, h)
    jobs = [(stack.g1[n], stack.g2[n]) for n in range(stack.n)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda j: filter_interferogram(j[0], j[1], params), jobs))
    return [filter_interferogram(a, b, params) for a, b in jobs]


def boxcar_filter(stack: InterferometricStack, size: int = 5) -> list[FilteredInterferogram]:
    """Plain moving-average estimate, used as a reference and for --skip-filter."""
    out = []
    for g1, g2 in zip(stack.g1, stack.g2):
        cross = g1 * np.conj(g2)
        pw = np.abs(g1) ** 2 + np.abs(g2) ** 2
        f = lambda a: ndimage.uniform_filter(a, size, mode="nearest")
        sc = f(cross.real) + 1j * f(cross.imag)
        sp = f(pw)
        n = float(size * size)
        out.append(_estimates(sc * n, f(np.abs(g1) * np.abs(g2)) * n, sp * n, np.full_like(sp, n),
                              np.ones_like(sp), "modulus"))
    return out
