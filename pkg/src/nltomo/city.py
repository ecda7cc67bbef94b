"""Synthetic city of box buildings rendered into a bistatic interferometric stack."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crlb import db_to_linear
from .geo import Footprint, GeocodeFrame
from .geometry import MUNICH_GEOMETRY, AcquisitionGeometry
from .nlfilter import InterferometricStack


@dataclass(frozen=True)
class Building:
    id: str
    east: tuple[float, float]      # near and far edge in ground range (m)
    north: tuple[float, float]     # azimuth extent (m)
    height: float

    @property
    def footprint(self) -> Footprint:
        (e0, e1), (n0, n1) = self.east, self.north
        return Footprint([(e0, n0), (e1, n0), (e1, n1), (e0, n1)], self.id, self.height)


@dataclass(frozen=True)
class CityConfig:
    """Layout and radiometry of the synthetic city.

    Buildings sit on a ``rows`` x ``cols`` lattice with ``pitch`` spacing
    (north, east) and random size, offset and height. Scatterer powers are
    per unit pixel; the noise power is set by ``snr_db`` relative to the
    ground power.
    """

    n_buildings: int = 50
    cols: int = 5                                  # along ground range (east)
    height_range: tuple[float, float] = (5.0, 50.0)
    size_range: tuple[float, float] = (50.0, 80.0)
    pitch: tuple[float, float] = (100.0, 190.0)    # north, east (m)
    margin: float = 60.0
    snr_db: float = 10.0
    ground_power: float = 1.0
    roof_power: float = 1.0
    facade_power: float = 1.0
    seed: int = 0
    geometry: AcquisitionGeometry = field(default=MUNICH_GEOMETRY, repr=False)
    pixel_spacing: tuple[float, float] = (2.17, 1.36)

    def __post_init__(self):
        if self.n_buildings < 1 or self.cols < 1:
            raise ValueError("need at least one building and one column")
        lo, hi = self.height_range
        if not 0 < lo <= hi:
            raise ValueError("height range must be positive and ordered")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise ValueError("size range must be positive and ordered")
        if min(self.pitch) <= self.size_range[1]:
            raise ValueError("pitch must exceed the largest building size")


@dataclass
class CityScene:
    stack: InterferometricStack
    buildings: list[Building]
    frame: GeocodeFrame
    geometry: AcquisitionGeometry
    # per pixel true elevations (NaN where absent): ground, facade, roof
    truth: dict = field(default_factory=dict)

    @property
    def footprints(self) -> list[Footprint]:
        return [b.footprint for b in self.buildings]


def layout_buildings(cfg: CityConfig, rng) -> list[Building]:
    rows = math.ceil(cfg.n_buildings / cfg.cols)
    pn, pe = cfg.pitch
    out = []
    for k in range(cfg.n_buildings):
        r, c = divmod(k, cfg.cols)
        we, wn = rng.uniform(*cfg.size_range, 2)
        e0 = cfg.margin + c * pe + rng.uniform(0, pe - we) * 0.3
        n0 = cfg.margin * 0.5 + r * pn + rng.uniform(0, pn - wn) * 0.5
        h = rng.uniform(*cfg.height_range)
        out.append(Building(f"b{k:02d}", (e0, e0 + we), (n0, n0 + wn), float(h)))
    assert rows * cfg.cols >= cfg.n_buildings
    return out


def render_scatterers(buildings, shape, frame: GeocodeFrame):
    """Ground, facade and roof elevations of every pixel (NaN = absent).

    Pixel (i, j) samples slant offset j*dr; its zero-elevation ground point
    lies at east = j*dr/sin(theta). A roof at height H appears H*cot(theta)
    nearer in ground range, the near facade spans the ranges in front of its
    base, and ground behind a building is shadowed for H*tan(theta).
    """
    th = frame.incidence_angle
    da, dr = frame.pixel_spacing
    H, W = shape
    e_anchor, n_anchor, _ = frame.anchor
    x0 = e_anchor + np.arange(W) * dr / math.sin(th)
    dx = dr / math.sin(th)
    north = n_anchor + np.arange(H) * da
    ground = np.zeros(shape)
    facade = np.full(shape, np.nan)
    roof = np.full(shape, np.nan)
    cot, tan = 1 / math.tan(th), math.tan(th)
    for b in buildings:
        (e0, e1), (n0, n1) = b.east, b.north
        rows = (north >= n0) & (north <= n1)
        if not rows.any():
            continue
        hb = b.height
        covered = (x0 >= e0) & (x0 <= e1)
        shadow = (x0 > e1) & (x0 < e1 + hb * tan)
        xr = x0 + hb * cot
        has_roof = (xr >= e0) & (xr <= e1)
        z = (e0 - x0) * tan
        zlo, zhi = (e0 - x0 - dx / 2) * tan, (e0 - x0 + dx / 2) * tan
        has_facade = (zhi > 0) & (zlo < hb)
        zc = np.clip(z, 0, hb)
        gcol = np.where(covered | shadow, np.nan, 0.0)
        ground[rows] = np.where(np.isnan(gcol), np.nan, ground[rows])
        fr = facade[rows]
        facade[rows] = np.where(has_facade & np.isnan(fr), zc / math.sin(th), fr)
        rr = roof[rows]
        roof[rows] = np.where(has_roof & np.isnan(rr), hb / math.sin(th), rr)
    return ground, facade, roof


def simulate_stack(layers, powers, geom: AcquisitionGeometry, noise_power: float, rng,
                   pixel_spacing=(2.17, 1.36)) -> InterferometricStack:
    """Speckled master/slave planes for each acquisition.

    Each present scatterer contributes circular Gaussian speckle of its power,
    drawn independently per acquisition; the slave sees it with phase
    exp(-j k_n s). Both images receive white noise of ``noise_power``.
    """
    shape = layers[0].shape
    N = geom.n
    k = geom.wavenumbers
    g1 = np.zeros((N,) + shape, dtype=complex)
    g2 = np.zeros_like(g1)

    def cn(power):
        return np.sqrt(power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    for n in range(N):
        for s, p in zip(layers, powers):
            present = np.isfinite(s)
            c = np.where(present, cn(p), 0)
            g1[n] += c
            g2[n] += c * np.exp(-1j * k[n] * np.nan_to_num(s))
        g1[n] += cn(noise_power)
        g2[n] += cn(noise_power)
    return InterferometricStack(g1, g2, tuple(pixel_spacing))


def render_city(cfg: CityConfig = CityConfig()) -> CityScene:
    rng = np.random.default_rng(cfg.seed)
    buildings = layout_buildings(cfg, rng)
    geom = cfg.geometry
    th = geom.incidence_angle
    frame = GeocodeFrame((0.0, 0.0, 0.0), th, 0.0, cfg.pixel_spacing)
    da, dr = cfg.pixel_spacing
    e_max = max(b.east[1] for b in buildings) + cfg.margin
    n_max = max(b.north[1] for b in buildings) + cfg.margin * 0.5
    shape = (int(math.ceil(n_max / da)), int(math.ceil(e_max * math.sin(th) / dr)))
    ground, facade, roof = render_scatterers(buildings, shape, frame)
    noise = cfg.ground_power / db_to_linear(cfg.snr_db)
    stack = simulate_stack((ground, facade, roof),
                           (cfg.ground_power, cfg.facade_power, cfg.roof_power),
                           geom, noise, rng, cfg.pixel_spacing)
    return CityScene(stack, buildings, frame, geom,
                     {"ground": ground, "facade": facade, "roof": roof})
