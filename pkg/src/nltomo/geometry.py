"""Acquisition geometry, elevation grids and the tomographic sensing matrix."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Invalid acquisition geometry or elevation grid."""


class DegenerateApertureError(GeometryError):
    """Baselines have no spread, so elevation is not resolvable."""


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Bistatic micro-stack geometry.

    ``baselines`` are the bistatic baselines of the N interferograms. Only
    these enter the sensing model; where the master tracks were does not
    matter for averaged interferograms.
    """

    wavelength: float
    range_center: float
    incidence_angle: float
    baselines: tuple[float, ...]
    acquisition_dates: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "baselines", tuple(float(b) for b in self.baselines))
        if self.acquisition_dates is not None:
            object.__setattr__(self, "acquisition_dates", tuple(self.acquisition_dates))
        if len(self.baselines) < 1:
            raise GeometryError("at least one baseline is required")
        if not self.wavelength > 0:
            raise GeometryError(f"wavelength must be positive, got {self.wavelength}")
        if not self.range_center > 0:
            raise GeometryError(f"range must be positive, got {self.range_center}")
        if not 0 < self.incidence_angle < math.pi / 2:
            raise GeometryError(f"incidence angle must be in (0, pi/2), got {self.incidence_angle}")
        if not all(math.isfinite(b) for b in self.baselines):
            raise GeometryError("baselines must be finite")
        if self.acquisition_dates is not None and len(self.acquisition_dates) != len(self.baselines):
            raise GeometryError("one date per baseline expected")

    @property
    def n(self) -> int:
        return len(self.baselines)

    @property
    def elevation_aperture(self) -> float:
        return max(self.baselines) - min(self.baselines)

    @property
    def baseline_std(self) -> float:
        """Population standard deviation of the baselines."""
        return float(np.std(self.baselines))

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.array([wavenumber(b, self) for b in self.baselines])

    def with_baselines(self, baselines) -> "AcquisitionGeometry":
        return AcquisitionGeometry(self.wavelength, self.range_center, self.incidence_angle,
                                   tuple(baselines))

    def to_dict(self) -> dict:
        out = {
            "wavelength_m": self.wavelength,
            "range_m": self.range_center,
            "incidence_deg": math.degrees(self.incidence_angle),
            "baselines_m": list(self.baselines),
        }
        if self.acquisition_dates is not None:
            out["dates"] = list(self.acquisition_dates)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AcquisitionGeometry":
        try:
            return cls(
                wavelength=float(doc["wavelength_m"]),
                range_center=float(doc["range_m"]),
                incidence_angle=math.radians(float(doc["incidence_deg"])),
                baselines=tuple(doc["baselines_m"]),
                acquisition_dates=tuple(doc["dates"]) if doc.get("dates") else None,
            )
        except KeyError as exc:
            raise GeometryError(f"geometry document lacks key {exc}") from None


def load_geometry(path) -> AcquisitionGeometry:
    with open(path) as f:
        return AcquisitionGeometry.from_dict(json.load(f))


def save_geometry(geom: AcquisitionGeometry, path) -> None:
    Path(path).write_text(json.dumps(geom.to_dict(), indent=2))


# TanDEM-X Munich stack: scene-centre parameters and the five bistatic baselines.
MUNICH_GEOMETRY = AcquisitionGeometry(
    wavelength=0.031,
    range_center=698_000.0,
    incidence_angle=math.radians(50.4),
    baselines=(184.40, 171.92, 32.30, -2.78, 9.30),
    acquisition_dates=("2016-07-25", "2016-09-07", "2017-02-19", "2017-04-26", "2017-07-01"),
)


@dataclass(frozen=True)
class ElevationGrid:
    samples: np.ndarray
    spacing: float = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).ravel()
        if s.size < 1:
            raise GeometryError("elevation grid is empty")
        if s.size == 1:
            spacing = 0.0
        else:
            d = np.diff(s)
            spacing = float(np.mean(d))
            if spacing <= 0 or np.any(d <= 0):
                raise GeometryError("elevation grid must be strictly increasing")
            if np.max(np.abs(d - spacing)) > 1e-9 * abs(spacing):
                raise GeometryError("elevation grid must be uniformly spaced")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_range(cls, start: float, stop: float, step: float) -> "ElevationGrid":
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return cls(start + step * np.arange(count))

    def __len__(self) -> int:
        return self.samples.size


def default_grid(geom: AcquisitionGeometry, span=(-1.5, 3.0), oversampling: int = 25) -> ElevationGrid:
    """Grid over ``span`` Rayleigh units with ``oversampling`` samples per resolution cell."""
    rho = rayleigh_resolution(geom)
    step = rho / oversampling
    lo = int(math.floor(span[0] * oversampling + 1e-9))
    hi = int(math.ceil(span[1] * oversampling - 1e-9))
    return ElevationGrid(step * np.arange(lo, hi + 1))


@dataclass(frozen=True)
class SensingMatrix:
    entries: np.ndarray
    wavenumbers: np.ndarray
    grid: ElevationGrid

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def rayleigh(self) -> float:
        """Rayleigh resolution implied by the wavenumber spread, 2*pi / (k_max - k_min)."""
        span = float(np.ptp(self.wavenumbers))
        return 2 * math.pi / span if span > 0 else math.inf

    def steering(self, elevations) -> np.ndarray:
        """Columns exp(-j k_n s) for arbitrary (off-grid) elevations."""
        s = np.atleast_1d(np.asarray(elevations, dtype=float))
        return np.exp(-1j * np.multiply.outer(self.wavenumbers, s))


def wavenumber(baseline: float, geom: AcquisitionGeometry) -> float:
    return -4 * math.pi * baseline / (geom.wavelength * geom.range_center)


def build_sensing_matrix(geom: AcquisitionGeometry, grid: ElevationGrid) -> SensingMatrix:
    if geom.n < 1 or len(grid) < 1:
        raise GeometryError("sensing matrix needs at least one baseline and one grid sample")
    k = geom.wavenumbers
    entries = np.exp(-1j * np.outer(k, grid.samples))
    entries.setflags(write=False)
    k.setflags(write=False)
    return SensingMatrix(entries, k, grid)


def rayleigh_resolution(geom: AcquisitionGeometry) -> float:
    aperture = geom.elevation_aperture
    if aperture <= 0:
        raise DegenerateApertureError("elevation aperture is zero")
    return geom.wavelength * geom.range_center / (2 * aperture)


def normalized_distance(s: float, geom: AcquisitionGeometry) -> float:
    return s / rayleigh_resolution(geom)


def height_of_ambiguity(baseline: float, geom: AcquisitionGeometry) -> float:
    """Height change per 2*pi of interferometric phase; ``inf`` for a zero baseline."""
    if baseline == 0:
        return math.inf
    value = geom.wavelength * geom.range_center * math.sin(geom.incidence_angle) / (2 * abs(baseline))
    return math.copysign(value, baseline)


def elevation_to_height(s, geom: AcquisitionGeometry):
    return np.multiply(s, math.sin(geom.incidence_angle))


def height_to_elevation(h, geom: AcquisitionGeometry):
    return np.divide(h, math.sin(geom.incidence_angle))
