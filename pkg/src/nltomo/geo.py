"""Map-coordinate point clouds, raster comparison and cloud alignment."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
import shapely
from shapely.geometry import Polygon

from .fusion import FusionParams, fuse
from .geometry import AcquisitionGeometry

log = logging.getLogger(__name__)

LAYERS = ("top", "bottom", "other")


class GeoError(ValueError):
    pass


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------

@dataclass
class TomoPointCloud:
    """Points in a local map frame (east, north, height in metres)."""

    east: np.ndarray
    north: np.ndarray
    height: np.ndarray
    amplitude: np.ndarray = None
    layer: np.ndarray = None

    def __post_init__(self):
        self.east = np.asarray(self.east, dtype=float).ravel()
        self.north = np.asarray(self.north, dtype=float).ravel()
        self.height = np.asarray(self.height, dtype=float).ravel()
        n = self.east.size
        if self.north.size != n or self.height.size != n:
            raise GeoError("coordinate arrays differ in length")
        self.amplitude = (np.ones(n) if self.amplitude is None
                          else np.asarray(self.amplitude, dtype=float).ravel())
        self.layer = (np.full(n, "other", dtype=object) if self.layer is None
                      else np.asarray(self.layer, dtype=object).ravel())
        if self.amplitude.size != n or self.layer.size != n:
            raise GeoError("attribute arrays differ in length")
        if not (np.all(np.isfinite(self.east)) and np.all(np.isfinite(self.north))
                and np.all(np.isfinite(self.height))):
            raise GeoError("point coordinates must be finite")
        bad = set(self.layer.tolist()) - set(LAYERS)
        if bad:
            raise GeoError(f"unknown layer tags {sorted(bad)}")

    def __len__(self) -> int:
        return self.east.size

    @property
    def xyz(self) -> np.ndarray:
        return np.column_stack([self.east, self.north, self.height])

    def subset(self, mask) -> "TomoPointCloud":
        m = np.asarray(mask)
        return TomoPointCloud(self.east[m], self.north[m], self.height[m], self.amplitude[m],
                              self.layer[m])

    @classmethod
    def from_xyz(cls, xyz, amplitude=None, layer=None) -> "TomoPointCloud":
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        return cls(xyz[:, 0], xyz[:, 1], xyz[:, 2], amplitude, layer)

    @classmethod
    def concatenate(cls, clouds) -> "TomoPointCloud":
        clouds = list(clouds)
        if not clouds:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        return cls(*(np.concatenate([getattr(c, f) for c in clouds])
                     for f in ("east", "north", "height", "amplitude", "layer")))


@dataclass
class RasterGrid:
    """Regular grid; row ``i`` spans north in [n0 + i*c, n0 + (i+1)*c).

    ``values`` holds NaN wherever ``mask`` is False.
    """

    origin: tuple[float, float]
    cell_size: float
    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        if not self.cell_size > 0:
            raise GeoError("cell_size must be positive")
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2:
            raise GeoError("values must be a 2-D plane")
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        self.mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.values)
        self.values[~self.mask] = np.nan
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_index(self, east, north):
        j = np.floor((np.asarray(east) - self.origin[0]) / self.cell_size).astype(int)
        i = np.floor((np.asarray(north) - self.origin[1]) / self.cell_size).astype(int)
        return i, j

    def cell_centers(self):
        h, w = self.shape
        e = self.origin[0] + (np.arange(w) + 0.5) * self.cell_size
        n = self.origin[1] + (np.arange(h) + 0.5) * self.cell_size
        return np.meshgrid(e, n)


@dataclass(frozen=True)
class LayerStats:
    min: float
    max: float
    std: float
    mean: float

    @classmethod
    def of(cls, samples) -> "LayerStats":
        s = np.asarray(samples, dtype=float)
        return cls(float(s.min()), float(s.max()), float(s.std()), float(s.mean()))


@dataclass(frozen=True)
class StructureReport:
    id: str
    top: LayerStats
    bottom: LayerStats
    relative_height: float
    reference_height: float = math.nan
    abs_height_difference: float = math.nan

    @property
    def height_difference(self) -> float:
        """Signed estimate minus reference."""
        return self.relative_height - self.reference_height


@dataclass
class Footprint:
    ring: np.ndarray                   # (M, 2) east, north
    id: str = ""
    reference_height: float = math.nan

    def __post_init__(self):
        self.ring = np.asarray(self.ring, dtype=float).reshape(-1, 2)
        if self.ring.shape[0] < 3:
            raise GeoError("a footprint needs at least three vertices")
        self.id = str(self.id)
        self.reference_height = (math.nan if self.reference_height is None
                                 else float(self.reference_height))

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.ring)


@dataclass
class PolygonSamples:
    id: str
    top: np.ndarray
    bottom: np.ndarray
    reference_height: float = math.nan


@dataclass
class RasterResult:
    grid: RasterGrid
    samples: list[PolygonSamples] = field(default_factory=list)
    excluded: int = 0


# --------------------------------------------------------------------------
# Geocoding
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeocodeFrame:
    """Local affine radar-to-map frame.

    ``anchor`` is the map position (east, north, height) of image pixel
    (0, 0) at zero elevation. ``heading_deg`` is the bearing of increasing
    azimuth, measured clockwise from north; range increases 90 degrees to
    its right.
    """

    anchor: tuple[float, float, float]
    incidence_angle: float                     # rad
    heading_deg: float = 0.0
    pixel_spacing: tuple[float, float] = (2.17, 1.36)   # azimuth, slant range (m)

    def __post_init__(self):
        if self.anchor is None:
            raise GeoError("geocoding needs an anchor map coordinate")
        a = tuple(float(v) for v in self.anchor)
        if len(a) == 2:
            a = a + (0.0,)
        if len(a) != 3 or not all(math.isfinite(v) for v in a):
            raise GeoError("anchor must be finite (east, north[, height])")
        object.__setattr__(self, "anchor", a)
        if not 0 < self.incidence_angle < math.pi / 2:
            raise GeoError("incidence angle must be in (0, 90) degrees")
        if min(self.pixel_spacing) <= 0:
            raise GeoError("pixel spacing must be positive")

    @classmethod
    def from_geometry(cls, geom: AcquisitionGeometry, anchor, heading_deg: float = 0.0,
                      pixel_spacing=(2.17, 1.36)) -> "GeocodeFrame":
        return cls(anchor, geom.incidence_angle, heading_deg, tuple(pixel_spacing))

    def _axes(self):
        h = math.radians(self.heading_deg)
        u_az = np.array([math.sin(h), math.cos(h)])
        u_rg = np.array([math.cos(h), -math.sin(h)])
        return u_az, u_rg

    def matrix(self) -> np.ndarray:
        """3x3 matrix taking (azimuth px, range px, elevation m) to map offsets."""
        u_az, u_rg = self._axes()
        th = self.incidence_angle
        da, dr = self.pixel_spacing
        M = np.zeros((3, 3))
        M[:2, 0] = u_az * da
        M[:2, 1] = u_rg * dr / math.sin(th)
        # an elevated point lies further out in ground range than its slant pixel
        M[:2, 2] = u_rg * math.cos(th)
        M[2, 2] = math.sin(th)
        return M


def geocode(pixels, frame: GeocodeFrame | None, amplitude=None, layer=None) -> TomoPointCloud:
    """Map (azimuth index, range index, elevation) triplets to map coordinates.

    Ground range is the slant-range offset over sin(theta) and height is
    s*sin(theta); the elevation also shifts the point s*cos(theta) outward in
    ground range.
    """
    if frame is None:
        raise GeoError("geocoding needs an anchor map coordinate")
    p = np.asarray(pixels, dtype=float).reshape(-1, 3)
    xyz = p @ frame.matrix().T + np.asarray(frame.anchor)
    return TomoPointCloud.from_xyz(xyz, amplitude, layer)


def inverse_geocode(cloud: TomoPointCloud, frame: GeocodeFrame) -> np.ndarray:
    """Inverse of :func:`geocode`: (azimuth index, range index, elevation) rows."""
    d = cloud.xyz - np.asarray(frame.anchor)
    return np.linalg.solve(frame.matrix(), d.T).T


# --------------------------------------------------------------------------
# Coarse alignment
# --------------------------------------------------------------------------

def sobel_edges(grid: RasterGrid) -> RasterGrid:
    """3x3 Sobel gradient magnitude.

    A cell is valid in the output only when its whole 3x3 neighbourhood is
    valid in the input.
    """
    if min(grid.shape) < 3:
        raise GeoError("grid must be at least 3x3")
    if not grid.mask.any():
        raise GeoError("grid is fully masked")
    v = np.where(grid.mask, grid.values, 0.0)
    gx = ndimage.sobel(v, axis=1, mode="nearest")
    gy = ndimage.sobel(v, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    ok = ndimage.binary_erosion(grid.mask, np.ones((3, 3), bool), border_value=0)
    return RasterGrid(grid.origin, grid.cell_size, np.where(ok, mag, np.nan), ok)


def _parabolic(ym, y0, yp) -> float:
    den = ym - 2 * y0 + yp
    if not np.isfinite(den) or den >= 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


def _ncc(a, ma, b, mb, di, dj):
    """Normalized correlation of a[i, j] with b[i - di, j - dj] over common valid cells."""
    H, W = a.shape
    i0, i1 = max(0, di), min(H, H + di)
    j0, j1 = max(0, dj), min(W, W + dj)
    if i1 - i0 < 2 or j1 - j0 < 2:
        return np.nan
    sa = a[i0:i1, j0:j1]
    sb = b[i0 - di:i1 - di, j0 - dj:j1 - dj]
    m = ma[i0:i1, j0:j1] & mb[i0 - di:i1 - di, j0 - dj:j1 - dj]
    if m.sum() < 4:
        return np.nan
    x = sa[m] - sa[m].mean()
    y = sb[m] - sb[m].mean()
    den = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    return float(np.dot(x, y) / den) if den > 0 else np.nan


def height_histogram(heights, lo: float, hi: float, bin_width: float = 0.5):
    edges = np.arange(math.floor(lo / bin_width) * bin_width,
                      hi + bin_width + 1e-9, bin_width)
    return np.histogram(heights, edges)[0].astype(float), edges


@dataclass(frozen=True)
class CoarseAlignment:
    shift_e: float          # moving minus reference (m)
    shift_n: float
    shift_h: float
    peak: float             # normalized correlation at the horizontal peak
    low_confidence: bool


def coarse_align(moving: RasterGrid, reference: RasterGrid, max_shift: int = 10,
                 heights_moving=None, heights_reference=None, bin_width: float = 0.5,
                 min_peak: float = 0.2) -> CoarseAlignment:
    """Offset of ``moving`` relative to ``reference`` on a shared lattice.

    Horizontal: argmax of the normalized cross-correlation of the Sobel edge
    images over integer shifts up to ``max_shift`` cells, refined by a
    parabola through the neighbouring scores. Vertical: argmax of the
    cross-correlation of the height histograms. Heights default to the valid
    raster values. Subtract the returned shifts from ``moving`` to align it.
    """
    if moving.shape != reference.shape or moving.cell_size != reference.cell_size \
            or moving.origin != reference.origin:
        raise GeoError("rasters must share origin, cell size and shape")
    ea, eb = sobel_edges(moving), sobel_edges(reference)
    a = np.nan_to_num(ea.values)
    b = np.nan_to_num(eb.values)
    m = int(max_shift)
    score = np.full((2 * m + 1, 2 * m + 1), np.nan)
    for di in range(-m, m + 1):
        for dj in range(-m, m + 1):
            score[di + m, dj + m] = _ncc(a, ea.mask, b, eb.mask, di, dj)
    if not np.isfinite(score).any():
        raise GeoError("no overlap within the search range")
    s = np.where(np.isfinite(score), score, -np.inf)
    ci, cj = np.unravel_index(np.argmax(s), s.shape)
    peak = float(s[ci, cj])
    fi = _parabolic(s[ci - 1, cj], peak, s[ci + 1, cj]) if 0 < ci < 2 * m else 0.0
    fj = _parabolic(s[ci, cj - 1], peak, s[ci, cj + 1]) if 0 < cj < 2 * m else 0.0
    shift_n = (ci - m + fi) * moving.cell_size
    shift_e = (cj - m + fj) * moving.cell_size

    hm = moving.values[moving.mask] if heights_moving is None else np.asarray(heights_moving, float)
    hr = reference.values[reference.mask] if heights_reference is None else \
        np.asarray(heights_reference, float)
    hm, hr = hm[np.isfinite(hm)], hr[np.isfinite(hr)]
    if hm.size == 0 or hr.size == 0:
        raise GeoError("no heights to correlate")
    lo = min(hm.min(), hr.min())
    hi = max(hm.max(), hr.max())
    cm, _ = height_histogram(hm, lo, hi, bin_width)
    cr, _ = height_histogram(hr, lo, hi, bin_width)
    xc = np.correlate(cm, cr, mode="full")
    k = int(np.argmax(xc))
    fk = _parabolic(xc[k - 1], xc[k], xc[k + 1]) if 0 < k < xc.size - 1 else 0.0
    shift_h = (k - (cr.size - 1) + fk) * bin_width
    low = peak < min_peak
    if low:
        log.warning("coarse alignment peak %.3f below %.2f", peak, min_peak)
    return CoarseAlignment(float(shift_e), float(shift_n), float(shift_h), peak, low)


# --------------------------------------------------------------------------
# ICP
# --------------------------------------------------------------------------

@dataclass
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    def apply(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=float) @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """self after inner."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_shift(cls, shift) -> "RigidTransform":
        return cls(np.eye(3), shift)


@dataclass
class IcpResult:
    transform: RigidTransform
    rms: float
    history: list[float]
    iterations: int
    translation_only: bool
    converged: bool


def kabsch(p, q):
    """Least-squares rotation and translation taking points p onto q."""
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    H = (p - pc).T @ (q - qc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, qc - R @ pc


def _is_degenerate(p) -> bool:
    if p.shape[0] < 3:
        return True
    s = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    return s[0] == 0 or s[1] <= 1e-9 * s[0]


def _as_xyz(c):
    return c.xyz if isinstance(c, TomoPointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)


def icp_align(moving, reference, init: RigidTransform | None = None, max_iter: int = 50,
              tol: float = 1e-4, reject: float = 3.0) -> IcpResult:
    """Point-to-point ICP of ``moving`` onto ``reference``.

    Pairs further apart than ``reject`` times the median pair distance are
    dropped before each closed-form update. An update is only accepted when
    it lowers the RMS pair distance, so the recorded history never rises.
    Collinear matched sets fall back to translation-only updates.
    """
    p0 = _as_xyz(moving)
    ref = _as_xyz(reference)
    if p0.shape[0] == 0 or ref.shape[0] == 0:
        raise GeoError("both clouds must be non-empty")
    tree = cKDTree(ref)
    T = init if init is not None else RigidTransform()

    def match(T):
        p = T.apply(p0)
        d, idx = tree.query(p)
        keep = d <= reject * np.median(d) + 1e-12
        return p[keep], ref[idx[keep]], float(np.sqrt(np.mean(d[keep] ** 2)))

    p, q, rms = match(T)
    history = [rms]
    trans_only = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if _is_degenerate(p):
            trans_only = True
            R, t = np.eye(3), q.mean(axis=0) - p.mean(axis=0)
        else:
            R, t = kabsch(p, q)
        T_new = RigidTransform(R, t).compose(T)
        p_new, q_new, rms_new = match(T_new)
        if not rms_new < rms:
            converged = True
            break
        gain = rms - rms_new
        T, p, q, rms = T_new, p_new, q_new, rms_new
        history.append(rms)
        if gain < tol:
            converged = True
            break
    return IcpResult(T, rms, history, it, trans_only, converged)


# --------------------------------------------------------------------------
# Rasterization and statistics
# --------------------------------------------------------------------------

def _covering_grid(east, north, cell_size):
    e0 = math.floor(east.min() / cell_size) * cell_size
    n0 = math.floor(north.min() / cell_size) * cell_size
    w = int(math.floor((east.max() - e0) / cell_size)) + 1
    h = int(math.floor((north.max() - n0) / cell_size)) + 1
    return (e0, n0), (h, w)


def grid_points(cloud: TomoPointCloud, cell_size: float, params: FusionParams = FusionParams(),
                origin=None, shape=None) -> RasterGrid:
    """Bin points into cells; each cell holds the robust fusion of its heights."""
    if not cell_size > 0:
        raise GeoError("cell_size must be positive")
    if len(cloud) == 0:
        raise GeoError("empty point cloud")
    if origin is None or shape is None:
        origin, shape = _covering_grid(cloud.east, cloud.north, cell_size)
    proto = RasterGrid(origin, cell_size, np.full(shape, np.nan))
    i, j = proto.cell_index(cloud.east, cloud.north)
    inside = (i >= 0) & (i < shape[0]) & (j >= 0) & (j < shape[1])
    flat = i[inside] * shape[1] + j[inside]
    h = cloud.height[inside]
    order = np.argsort(flat, kind="stable")
    flat, h = flat[order], h[order]
    cells, start = np.unique(flat, return_index=True)
    values = np.full(shape[0] * shape[1], np.nan)
    for c, seg in zip(cells, np.split(h, start[1:])):
        values[c] = fuse(seg, params)
    return RasterGrid(origin, cell_size, values.reshape(shape))


def load_footprints_obj(obj) -> list[Footprint]:
    out = []
    for k, item in enumerate(obj):
        if isinstance(item, dict):
            ring = item.get("ring", item.get("polygon"))
            out.append(Footprint(ring, item.get("id", k), item.get("reference_height")))
        else:
            out.append(Footprint(item, k))
    return out


def polygon_zones(east, north, footprint: Footprint, ring_width: float):
    """Masks of points inside the polygon and inside the exterior ring."""
    poly = footprint.polygon
    inside = shapely.contains_xy(poly, east, north)
    outer = shapely.contains_xy(poly.buffer(ring_width, join_style="mitre"), east, north)
    return inside, outer & ~inside


def rasterize(cloud: TomoPointCloud, footprints, cell_size: float, ring_cells: float = 2.0,
              params: FusionParams = FusionParams()) -> RasterResult:
    """Raster of fused heights plus per-footprint top and bottom height samples.

    Points inside a footprint are its top samples; points outside it but
    within ``ring_cells`` cells of its outline are its bottom samples.
    Footprints without interior points are excluded and counted.
    """
    grid = grid_points(cloud, cell_size, params)
    res = RasterResult(grid)
    for fp in footprints:
        inside, ring = polygon_zones(cloud.east, cloud.north, fp, ring_cells * cell_size)
        if not inside.any():
            res.excluded += 1
            log.info("footprint %s has no interior points; excluded", fp.id)
            continue
        res.samples.append(PolygonSamples(fp.id, cloud.height[inside], cloud.height[ring],
                                          fp.reference_height))
    return res


def structure_stats(samples, reference=None, fusion: FusionParams | None = None) -> list[StructureReport]:
    """Per-structure layer statistics and relative heights.

    The relative height is the top layer's location minus the bottom
    layer's: the plain mean, or with ``fusion`` the robust M-estimate over
    all samples of the layer within the footprint. ``reference``
    optionally maps structure id to its reference relative height;
    otherwise each sample set's own ``reference_height`` is used.
    Structures with an empty layer are skipped.
    """
    reports = []
    for s in samples:
        top = np.asarray(s.top, dtype=float)
        bot = np.asarray(s.bottom, dtype=float)
        top, bot = top[np.isfinite(top)], bot[np.isfinite(bot)]
        if top.size == 0 or bot.size == 0:
            log.info("structure %s skipped: empty %s layer", s.id, "top" if top.size == 0 else "bottom")
            continue
        t, b = LayerStats.of(top), LayerStats.of(bot)
        rel = t.mean - b.mean if fusion is None else fuse(top, fusion) - fuse(bot, fusion)
        ref = s.reference_height
        if reference is not None and s.id in reference:
            ref = float(reference[s.id])
        reports.append(StructureReport(s.id, t, b, rel, ref, abs(rel - ref)))
    return reports


@dataclass(frozen=True)
class CityHistogram:
    counts: np.ndarray
    edges: np.ndarray
    n_total: int
    n_retained: int
    frac_1m: float
    frac_2m: float
    frac_15m: float
    std: float


def citywide_histogram(diffs, truncation: float = 15.0, bin_width: float = 0.5) -> CityHistogram:
    """Histogram of height differences within +-truncation with summary fractions.

    Fractions and std refer to the retained (truncated) set.
    """
    if not truncation > 0:
        raise GeoError("truncation must be positive")
    d = np.asarray(diffs, dtype=float).ravel()
    d = d[np.isfinite(d)]
    nb = int(math.ceil(truncation / bin_width))
    edges = np.linspace(-nb * bin_width, nb * bin_width, 2 * nb + 1)
    kept = d[np.abs(d) <= truncation]
    counts = np.histogram(kept, edges)[0]
    if kept.size == 0:
        return CityHistogram(counts, edges, d.size, 0, 0.0, 0.0, 0.0, 0.0)
    a = np.abs(kept)
    return CityHistogram(counts, edges, d.size, kept.size, float(np.mean(a <= 1.0)),
                         float(np.mean(a <= 2.0)), float(np.mean(a <= 15.0)), float(kept.std()))
