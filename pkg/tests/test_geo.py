import math

import numpy as np
import pytest

from nltomo.fusion import FusionParams
from nltomo.geo import (Footprint, GeocodeFrame, GeoError, RasterGrid, RigidTransform, TomoPointCloud,
                        citywide_histogram, coarse_align, geocode, grid_points, icp_align, inverse_geocode,
                        kabsch, load_footprints_obj, polygon_zones, rasterize, sobel_edges, structure_stats)

FRAME = GeocodeFrame((1000.0, 2000.0, 5.0), math.radians(50.4), 15.0)


def test_cloud_validation():
    with pytest.raises(GeoError):
        TomoPointCloud([0, 1], [0], [0, 1])
    with pytest.raises(GeoError):
        TomoPointCloud([0], [0], [np.nan])
    with pytest.raises(GeoError):
        TomoPointCloud([0], [0], [0], layer=["roof"])
    c = TomoPointCloud.concatenate([TomoPointCloud.from_xyz(np.zeros((2, 3))),
                                    TomoPointCloud.from_xyz(np.ones((3, 3)))])
    assert len(c) == 5 and len(c.subset(c.height > 0.5)) == 3


def test_frame_validation():
    with pytest.raises(GeoError):
        GeocodeFrame(None, 0.8)
    with pytest.raises(GeoError):
        GeocodeFrame((0.0, 0.0), 0.0)
    assert GeocodeFrame((1.0, 2.0), 0.8).anchor == (1.0, 2.0, 0.0)


def test_geocode_height_and_roundtrip(rng):
    pix = np.column_stack([rng.uniform(0, 100, 50), rng.uniform(0, 100, 50), rng.uniform(-20, 80, 50)])
    cloud = geocode(pix, FRAME)
    assert np.allclose(cloud.height - 5.0, pix[:, 2] * math.sin(FRAME.incidence_angle))
    assert np.allclose(inverse_geocode(cloud, FRAME), pix)
    with pytest.raises(GeoError):
        geocode(pix, None)


def test_geocode_elevation_moves_outward_in_range():
    f = GeocodeFrame((0.0, 0.0, 0.0), math.radians(50.4))
    a, b = geocode([[0, 0, 0.0], [0, 0, 10.0]], f).xyz
    assert b[0] - a[0] == pytest.approx(10 * math.cos(f.incidence_angle))


def test_sobel_step_peak():
    img = np.zeros((7, 8))
    img[:, 4:] = 3.0
    e = sobel_edges(RasterGrid((0, 0), 1.0, img))
    assert np.nanmax(e.values) == pytest.approx(12.0)
    with pytest.raises(GeoError):
        sobel_edges(RasterGrid((0, 0), 1.0, np.zeros((2, 2))))


def _box_raster(rng):
    H = np.zeros((60, 60))
    for _ in range(8):
        i, j = rng.integers(5, 45, 2)
        H[i:i + rng.integers(5, 12), j:j + rng.integers(5, 12)] = rng.uniform(10, 40)
    return H


def test_coarse_align_recovers_shift(rng):
    H = _box_raster(rng)
    ref = RasterGrid((0.0, 0.0), 1.0, H)
    mov = RasterGrid((0.0, 0.0), 1.0, np.roll(np.roll(H, -2, axis=0), 3, axis=1) + 5.0)
    ca = coarse_align(mov, ref)
    assert ca.shift_e == pytest.approx(3.0, abs=0.5)
    assert ca.shift_n == pytest.approx(-2.0, abs=0.5)
    assert ca.shift_h == pytest.approx(5.0, abs=0.5)
    assert not ca.low_confidence


def test_coarse_align_requires_shared_lattice():
    a = RasterGrid((0, 0), 1.0, np.zeros((10, 10)))
    with pytest.raises(GeoError):
        coarse_align(a, RasterGrid((1, 0), 1.0, np.zeros((10, 10))))


def test_kabsch_and_rigid_transform(rng):
    p = rng.normal(size=(30, 3))
    th = 0.3
    Rz = np.array([[math.cos(th), -math.sin(th), 0], [math.sin(th), math.cos(th), 0], [0, 0, 1]])
    q = p @ Rz.T + [1, 2, 3]
    R, t = kabsch(p, q)
    assert np.allclose(R, Rz) and np.allclose(t, [1, 2, 3])
    T = RigidTransform(R, t)
    assert np.allclose(RigidTransform.from_matrix(T.matrix()).apply(p), q)


def test_icp_noiseless(rng):
    pts = rng.uniform(0, 50, (400, 3))
    t = np.array([5.0, 3.0, -2.0])
    res = icp_align(pts + t, pts, RigidTransform.from_shift(-t + 0.3))
    assert np.max(np.abs(res.transform.translation + t)) <= 1e-6
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_icp_collinear_falls_back():
    line = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
    res = icp_align(line + [0.0, 0.5, 0.2], line)
    assert res.translation_only


def test_icp_empty():
    with pytest.raises(GeoError):
        icp_align(np.zeros((0, 3)), np.zeros((3, 3)))


def test_grid_points_fuses_cells():
    c = TomoPointCloud([0.5, 0.6, 0.7, 2.5], [0.5, 0.5, 0.5, 0.5], [10.0, 10.0, 90.0, 3.0])
    g = grid_points(c, 1.0)
    assert g.values[0, 0] == pytest.approx(10.0, abs=1e-6)
    assert g.values[0, 2] == 3.0 and np.isnan(g.values[0, 1])


def test_footprints_and_zones(rng):
    fps = load_footprints_obj([{"id": "a", "ring": [[0, 0], [10, 0], [10, 10], [0, 10]], "reference_height": 20},
                               [[20, 20], [30, 20], [30, 30]]])
    assert fps[0].reference_height == 20 and fps[1].id == "1"
    with pytest.raises(GeoError):
        Footprint([[0, 0], [1, 1]])
    P = rng.uniform(-0.5, 1.5, (400, 2))
    sq = Footprint([[0, 0], [1, 0], [1, 1], [0, 1]])
    inside, ring = polygon_zones(P[:, 0], P[:, 1], sq, 0.2)
    brute = (P[:, 0] > 0) & (P[:, 0] < 1) & (P[:, 1] > 0) & (P[:, 1] < 1)
    assert np.array_equal(inside, brute)
    assert not np.any(inside & ring)


def test_box_scene_relative_height(rng):
    E, N = np.meshgrid(np.arange(-10, 30, 0.5), np.arange(-10, 30, 0.5))
    roof = (E > 0) & (E < 20) & (N > 0) & (N < 20)
    h = np.where(roof, 20.0, 0.0) + rng.normal(0, 0.5, E.shape)
    cloud = TomoPointCloud(E, N, h)
    fp = Footprint([[0, 0], [20, 0], [20, 20], [0, 20]], "box", 20.0)
    res = rasterize(cloud, [fp, Footprint([[100, 100], [101, 100], [101, 101]], "empty")], 2.0)
    assert res.excluded == 1
    for fusion in (None, FusionParams()):
        rep = structure_stats(res.samples, fusion=fusion)[0]
        assert rep.relative_height == pytest.approx(20.0, abs=0.5)
        assert rep.abs_height_difference < 0.5
    rep = structure_stats(res.samples, reference={"box": 21.0})[0]
    assert rep.height_difference == pytest.approx(rep.relative_height - 21.0)


def test_histogram_fractions():
    d = [0.5, -1.5, 3.0, -20.0, 14.0, np.nan]
    h = citywide_histogram(d)
    assert h.n_total == 5 and h.n_retained == 4
    assert h.frac_1m == 0.25 and h.frac_2m == 0.5
    assert h.counts.sum() == 4
    with pytest.raises(GeoError):
        citywide_histogram(d, truncation=0)
