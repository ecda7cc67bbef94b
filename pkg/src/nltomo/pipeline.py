"""End-to-end chain from an interferometric stack to a map point cloud."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionParams, fuse_image
from .geo import (CityHistogram, GeocodeFrame, StructureReport, TomoPointCloud, citywide_histogram,
                  geocode, rasterize, structure_stats)
from .geometry import AcquisitionGeometry, ElevationGrid, build_sensing_matrix, rayleigh_resolution
from .inversion import invert_batch, noise_power_map
from .modelsel import K_MAX, select_batch
from .nlfilter import FilteredInterferogram, FilterParams, InterferometricStack, boxcar_filter, filter_stack

log = logging.getLogger(__name__)

STAGES = ("filter", "invert", "select", "fuse", "geocode")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineParams:
    filter: FilterParams = FilterParams()
    skip_filter: bool = False
    estimator: str = "two-stage"
    lambda_frac: float = 0.15
    peak_ratio: float = 3.0
    grid_span: tuple[float, float] = (-1.5, 3.0)   # Rayleigh units
    grid_step: float | None = None                 # m; default rho/25
    criterion: str = "bic"
    fusion: FusionParams = FusionParams()
    fuse: bool = True
    cs_tol: float = 1e-6
    chunk: int = 20000
    signal_gate: float = 0.5      # fraction of the scene median signal power; 0 disables
    layers: str = "selected"      # "selected": K-hat scatterers, "primary": single-scatterer fit

    def __post_init__(self):
        if self.layers not in ("selected", "primary"):
            raise ValueError("layers must be 'selected' or 'primary'")
        if not self.signal_gate >= 0:
            raise ValueError("signal_gate must be non-negative")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")


@dataclass
class PipelineResult:
    filtered: list[FilteredInterferogram]
    interferograms: np.ndarray        # (N, H, W)
    noise_power: np.ndarray           # (H, W)
    k_hat: np.ndarray                 # (H, W) int8
    elevation: np.ndarray             # (H, W, K_MAX), ascending, NaN where absent
    amplitude: np.ndarray             # (H, W, K_MAX)
    fused: np.ndarray                 # (H, W, K_MAX) after fusion
    cloud: TomoPointCloud | None = None
    profiles: np.ndarray | None = field(default=None, repr=False)


def elevation_grid(geom: AcquisitionGeometry, span=(-1.5, 3.0), step: float | None = None) -> ElevationGrid:
    rho = rayleigh_resolution(geom)
    step = rho / 25 if step is None else step
    return ElevationGrid.from_range(span[0] * rho, span[1] * rho, step)


def _invert_chunk(G, noise, signal, R, params: PipelineParams):
    prior = np.maximum(signal, np.finfo(float).tiny) / R.shape[1]
    X = invert_batch(G, R, params.estimator, sigma_eps2=noise, lambda_frac=params.lambda_frac,
                     peak_ratio=params.peak_ratio, prior_power=prior, tol=params.cs_tol)
    sel = select_batch(G, R, X, criterion=params.criterion)
    return sel.k_hat, sel.elevation, sel.amplitude, sel.order_elevation


def invert_and_select(interferograms, noise, signal, R, params: PipelineParams, threads: int = 1):
    """Per-pixel inversion and order selection, chunked over pixels."""
    N = interferograms.shape[0]
    G = interferograms.reshape(N, -1)
    P = G.shape[1]
    nz = noise.ravel()
    sg = signal.ravel()
    chunks = [(a, min(a + params.chunk, P)) for a in range(0, P, params.chunk)]

    def run(c):
        a, b = c
        return _invert_chunk(G[:, a:b], nz[a:b], sg[a:b], R, params)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    k_hat = np.concatenate([p[0] for p in parts])
    elev = np.concatenate([p[1] for p in parts])
    amp = np.concatenate([p[2] for p in parts])
    orders = np.concatenate([p[3] for p in parts])
    return k_hat, elev, amp, orders


def signal_gate(k_hat, signal, fraction: float):
    """Zero the order of pixels whose signal power is below ``fraction`` of the scene median.

    Order selection compares fits of the same data and is blind to the
    absolute signal level, so noise-only pixels (shadow) need this test.
    """
    if fraction <= 0:
        return k_hat
    return np.where(signal >= fraction * np.median(signal), k_hat, 0).astype(k_hat.dtype)


def layer_planes(k_hat, elevation, order_elevation=None, policy: str = "selected"):
    """Upper and lower scatterer planes.

    ``selected``: single scatterers go to the upper plane and double
    scatterers fill both. ``primary``: every detected pixel contributes its
    single-scatterer fit (``order_elevation[..., 1, 0]``) to the upper plane.
    """
    if policy == "primary":
        top = np.where(k_hat >= 1, order_elevation[..., 1, 0], np.nan)
        return top, np.full(top.shape, np.nan)
    top = np.where(k_hat >= 1, np.where(k_hat == 2, elevation[..., 1], elevation[..., 0]), np.nan)
    bottom = np.where(k_hat == 2, elevation[..., 0], np.nan)
    return top, bottom


def filtered_arrays(filt: list[FilteredInterferogram]):
    """Complex interferograms, noise power and signal power planes from filter output."""
    ifg = np.stack([f.interferogram for f in filt])
    mu = np.stack([f.mu for f in filt])
    s2 = np.stack([f.sigma2 for f in filt])
    noise = noise_power_map(mu, s2)
    signal = np.mean(2 * s2 * np.clip(mu, 0, 1), axis=0)
    return ifg, noise, signal


def run_filter(stack: InterferometricStack, params: PipelineParams, threads: int = 1):
    return boxcar_filter(stack, 1) if params.skip_filter else filter_stack(stack, params.filter, threads)


def run_inversion(ifg, noise, signal, geom: AcquisitionGeometry, params: PipelineParams, threads: int = 1):
    """Invert and select every pixel; returns gated K-hat, elevations, amplitudes and order fits."""
    shape = ifg.shape[1:]
    R = build_sensing_matrix(geom, elevation_grid(geom, params.grid_span, params.grid_step))
    k_hat, elev, amp, orders = invert_and_select(ifg, noise, signal, R, params, threads)
    k_hat = signal_gate(k_hat.reshape(shape), signal, params.signal_gate)
    return (k_hat, elev.reshape(shape + (K_MAX,)), amp.reshape(shape + (K_MAX,)),
            orders.reshape(shape + orders.shape[1:]))


def fuse_layers(k_hat, elevation, orders, params: PipelineParams):
    """Bottom and top elevation planes, fused over radius-``r`` disks when enabled."""
    top, bottom = layer_planes(k_hat, elevation, orders, params.layers)
    if params.fuse:
        top = fuse_image(top, np.isfinite(top), params.fusion)
        bottom = fuse_image(bottom, np.isfinite(bottom), params.fusion)
    return np.stack([bottom, top], axis=-1)


def run_pipeline(stack: InterferometricStack, geom: AcquisitionGeometry, frame: GeocodeFrame,
                 params: PipelineParams = PipelineParams(), threads: int = 1,
                 callback=None) -> PipelineResult:
    """Filter, invert, select, fuse and geocode; failures name their stage.

    ``callback(stage, payload)`` is invoked after each completed stage, so a
    caller can persist intermediate products that survive a later failure.
    """
    if stack.n != geom.n:
        raise StageError("filter", ValueError(f"stack has {stack.n} pairs, geometry {geom.n}"))
    notify = callback or (lambda stage, payload: None)
    stage = "filter"
    try:
        filt = run_filter(stack, params, threads)
        ifg, noise, signal = filtered_arrays(filt)
        notify("filter", filt)

        stage = "invert"
        k_hat, elev, amp, orders = run_inversion(ifg, noise, signal, geom, params, threads)
        notify("select", {"k_hat": k_hat, "elevation": elev, "amplitude": amp, "orders": orders})

        stage = "fuse"
        fused = fuse_layers(k_hat, elev, orders, params)
        notify("fuse", fused)

        stage = "geocode"
        cloud = cloud_from_layers(k_hat, fused, amp, frame)
        notify("geocode", cloud)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return PipelineResult(filt, ifg, noise, k_hat, elev, amp, fused, cloud)


def cloud_from_layers(k_hat, fused, amp, frame: GeocodeFrame) -> TomoPointCloud:
    """Geocode every detected scatterer with its fused elevation.

    Pixels with both planes filled give a bottom and a top point; a lone
    upper-plane value is tagged ``other`` and carries the strongest
    amplitude of the pixel.
    """
    ii, jj = np.indices(k_hat.shape)
    pair = np.isfinite(fused[..., 0]) & (k_hat == 2)
    strongest = np.take_along_axis(amp, np.argmax(np.nan_to_num(np.abs(amp)), axis=-1)[..., None], -1)[..., 0]
    parts = []
    for mask, s, a, tag in (
            (pair, fused[..., 0], amp[..., 0], "bottom"),
            (pair, fused[..., 1], amp[..., 1], "top"),
            ((k_hat >= 1) & ~pair, fused[..., 1], strongest, "other")):
        m = mask & np.isfinite(s)
        if not m.any():
            continue
        trip = np.column_stack([ii[m], jj[m], s[m]])
        parts.append(geocode(trip, frame, np.abs(a[m]), np.full(int(m.sum()), tag, dtype=object)))
    return TomoPointCloud.concatenate(parts)


@dataclass
class Comparison:
    reports: list[StructureReport]
    histogram: CityHistogram
    excluded: int
    skipped: int


def compare(cloud: TomoPointCloud, footprints, cell_size: float = 2.0, truncation: float = 15.0,
            ring_cells: float = 2.0, fusion: FusionParams | None = FusionParams(),
            reference=None) -> Comparison:
    """Per-structure statistics against reference heights and the citywide summary.

    With ``fusion`` each layer's height is the robust estimate over the
    footprint's samples; ``None`` falls back to plain means.
    """
    ras = rasterize(cloud, footprints, cell_size, ring_cells, fusion or FusionParams())
    reports = structure_stats(ras.samples, reference, fusion)
    diffs = [r.height_difference for r in reports if math.isfinite(r.reference_height)]
    skipped = len(ras.samples) - len(reports)
    return Comparison(reports, citywide_histogram(diffs, truncation), ras.excluded, skipped)
