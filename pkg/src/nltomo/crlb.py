"""Cramer-Rao bounds for single and double scatterer elevation estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import AcquisitionGeometry, DegenerateApertureError, rayleigh_resolution


@dataclass(frozen=True)
class CrlbReport:
    sigma_s_single: float
    correction_factor: float
    sigma_s_double: float
    sigma_b: float
    normalized: float


def db_to_linear(db):
    return np.power(10.0, np.divide(db, 10.0))


def linear_to_db(x):
    return 10.0 * np.log10(x)


def crlb_single(geom: AcquisitionGeometry, snr: float, n: int | None = None) -> float:
    """Elevation CRLB of a single point scatterer.

    Parameters
    ----------
    geom : AcquisitionGeometry
        Supplies wavelength, range and the baseline spread. The spread is
        the population standard deviation of ``geom.baselines``.
    snr : float
        Linear signal-to-noise ratio per acquisition.
    n : int, optional
        Number of interferograms, defaults to ``geom.n``.
    """
    n = geom.n if n is None else n
    if snr <= 0 or n < 1:
        raise ValueError("snr must be positive and n >= 1")
    sigma_b = geom.baseline_std
    if sigma_b <= 0:
        raise DegenerateApertureError("baselines have zero spread")
    return geom.wavelength * geom.range_center / (4 * math.pi * sigma_b * math.sqrt(2 * snr * n))


def c0_exact(kappa: float, delta_phi: float) -> float:
    """Interference correction factor for two scatterers with phase difference ``delta_phi``.

    Clamped to 1 where the radicand is non-positive (kappa >= 3).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    a = 3 - 2 * kappa
    num = 40 * kappa**-2 * (1 - kappa / 3)
    den = 9 - 6 * a * math.cos(2 * delta_phi) + a * a
    if num <= 0 or den <= 0:
        return 1.0
    return max(math.sqrt(num / den), 1.0)


def c0_approx(kappa: float) -> float:
    """Correction factor averaged over the random phase difference."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return max(2.57 * (kappa**-1.5 - 0.11) ** 2 + 0.62, 1.0)


def crlb_double(geom: AcquisitionGeometry, snr: float, n: int | None, kappa: float) -> CrlbReport:
    single = crlb_single(geom, snr, n)
    c0 = c0_approx(kappa)
    return CrlbReport(
        sigma_s_single=single,
        correction_factor=c0,
        sigma_s_double=c0 * single,
        sigma_b=geom.baseline_std,
        normalized=c0 * single / rayleigh_resolution(geom),
    )


def crlb_report(geom: AcquisitionGeometry, snr: float, n: int | None = None) -> CrlbReport:
    single = crlb_single(geom, snr, n)
    return CrlbReport(single, 1.0, single, geom.baseline_std, single / rayleigh_resolution(geom))
