"""Synthetic micro-stacks and Monte Carlo accuracy experiments."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .crlb import CrlbReport, c0_approx, crlb_single, db_to_linear
from .geometry import (MUNICH_GEOMETRY, AcquisitionGeometry, build_sensing_matrix, default_grid,
                       rayleigh_resolution)
from .inversion import invert_batch, scene_prior_power
from .modelsel import select_batch
from .scatterers import ScattererSet, ScattererSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationConfig:
    """One Monte Carlo cell.

    With ``elevation_unit == "rayleigh"`` the scatterer elevations are given
    in units of the Rayleigh resolution of each baseline draw.
    """

    scatterers: tuple[ScattererSpec, ...]
    snr_db: float = 10.0
    n_acquisitions: int = 5
    n_realizations: int = 1000
    n_baseline_draws: int = 20
    baseline_span: float = MUNICH_GEOMETRY.elevation_aperture
    rng_seed: int = 0
    elevation_unit: str = "m"
    estimator: str = "svd"
    criterion: str = "bic"
    window: float = 0.5          # detection window in Rayleigh units
    random_phase: bool = True
    cs_tol: float = 1e-6         # lasso stopping rule inside Monte Carlo runs
    base_geometry: AcquisitionGeometry = field(default=MUNICH_GEOMETRY, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.n_realizations < 1 or self.n_baseline_draws < 1:
            raise ValueError("n_realizations and n_baseline_draws must be >= 1")
        if self.n_acquisitions < 1:
            raise ValueError("n_acquisitions must be >= 1")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if not self.baseline_span > 0:
            raise ValueError("baseline_span must be positive")
        if self.elevation_unit not in ("m", "rayleigh"):
            raise ValueError("elevation_unit must be 'm' or 'rayleigh'")
        if not self.window > 0:
            raise ValueError("window must be positive")


@dataclass(frozen=True)
class MonteCarloResult:
    bias: np.ndarray              # per true scatterer (m)
    std: np.ndarray               # per true scatterer (m), pooled within-draw
    detection_rate: float
    crlb_reference: CrlbReport    # averaged over baseline draws (in variance)
    rayleigh: float               # mean Rayleigh resolution of the draws (m)
    normalized_std: np.ndarray    # std / rho_s, pooled within-draw
    n_samples: int
    draw_normalized_var: np.ndarray = field(default=None, repr=False)   # (draws, Q)
    draw_counts: np.ndarray = field(default=None, repr=False)           # scored samples per draw


def draw_baselines(span: float, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. uniform baselines on [0, span]."""
    if not span > 0 or n < 1:
        raise ValueError("span must be positive and n >= 1")
    return rng.uniform(0.0, span, n)


def _noise(shape, power, rng):
    return np.sqrt(power / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_measurements(spec, geom: AcquisitionGeometry, snr_db: float | None, rng=None):
    """Noisy measurement vector of a point-scatterer scene.

    ``snr_db=None`` gives the noiseless vector. An empty scene has no
    defined SNR, so it needs an explicit noise-free call.
    """
    k = geom.wavenumbers
    g = np.zeros(k.size, dtype=complex)
    for sc in spec:
        g += sc.complex_amplitude * np.exp(-1j * k * sc.elevation)
    if snr_db is None:
        return g
    power = sum(sc.amplitude ** 2 for sc in spec)
    if power == 0:
        raise ValueError("SNR undefined for an empty or zero-amplitude scene")
    rng = np.random.default_rng(rng)
    return g + _noise(k.size, power / db_to_linear(snr_db), rng)


def simulate_batch(elev, amp, k, snr_db, n_real, rng, random_phase=True):
    """(N, n_real) measurements; amplitudes fixed, phases redrawn per realization."""
    elev = np.asarray(elev, dtype=float)
    amp = np.asarray(amp, dtype=complex)
    Q = elev.size
    if random_phase:
        ph = np.exp(1j * rng.uniform(-np.pi, np.pi, (Q, n_real)))
        coef = np.abs(amp)[:, None] * ph
    else:
        coef = np.broadcast_to(amp[:, None], (Q, n_real))
    E = np.exp(-1j * np.outer(k, elev))
    G = E @ coef
    power = float(np.sum(np.abs(amp) ** 2))
    G = G + _noise(G.shape, power / db_to_linear(snr_db), rng)
    return G


def match_windows(truth, window):
    """Half-widths of the matching windows around each true elevation.

    Each is ``window`` capped at half the distance to the nearest other true
    scatterer, so no estimate can be inside two windows.
    """
    t = np.asarray(truth, dtype=float)
    w = np.full(t.size, float(window))
    if t.size > 1:
        d = np.abs(t[:, None] - t[None, :])
        np.fill_diagonal(d, np.inf)
        w = np.minimum(w, 0.5 * d.min(axis=1))
    return w


def _match(est, truth, window):
    """True if every true elevation has its own estimate within its window."""
    if len(est) != len(truth):
        return False
    w = match_windows(truth, window)
    for perm in itertools.permutations(range(len(est))):
        if all(abs(est[p] - t) <= wi for p, t, wi in zip(perm, truth, w)):
            return True
    return False


def detection_rate(estimates, truth, window: float) -> float:
    """Fraction of realizations whose order and elevations match the truth.

    ``estimates`` is a sequence of ScattererSet; ``truth`` a list of
    ScattererSpec. A match needs K equal to the true count and a distinct
    estimate within the window of each true scatterer (see
    :func:`match_windows`).
    """
    if not window > 0:
        raise ValueError("window must be positive")
    estimates = list(estimates)
    if not estimates:
        return 0.0
    t = [sc.elevation for sc in truth]
    hits = 0
    for est in estimates:
        if est is None:
            continue
        if est.k_hat == len(t) and _match(list(est.elevations), t, window):
            hits += 1
    return hits / len(estimates)


def _batch_detect(k_hat, elev, truth, window):
    Q = len(truth)
    ok = k_hat == Q
    if Q == 0:
        return ok
    hit = np.zeros_like(ok)
    e = elev[:, :Q]
    w = match_windows(truth, window)
    for perm in itertools.permutations(range(Q)):
        m = np.ones_like(ok)
        for p, t, wi in zip(perm, truth, w):
            m &= np.abs(e[:, p] - t) <= wi
        hit |= m
    return ok & hit


def _assign_errors(elev, truth):
    """Errors of estimated vs true elevations, both sorted ascending.

    Rows with fewer finite estimates than true scatterers give NaN.
    """
    Q = truth.size
    if Q == 0:
        return np.empty((elev.shape[0], 0))
    e = np.sort(elev[:, :Q], axis=1)  # NaN sorts last
    return e - np.sort(truth)[None, :]


def _run_draw(cfg: SimulationConfig, seed_seq):
    rng = np.random.default_rng(seed_seq)
    base = cfg.base_geometry
    for _ in range(100):
        b = draw_baselines(cfg.baseline_span, cfg.n_acquisitions, rng)
        if cfg.n_acquisitions == 1 or np.ptp(b) > 0:
            break
    geom = base.with_baselines(b)
    rho = rayleigh_resolution(geom)
    scale = rho if cfg.elevation_unit == "rayleigh" else 1.0
    truth = np.array([sc.elevation * scale for sc in cfg.scatterers])
    amp = np.array([sc.complex_amplitude for sc in cfg.scatterers])
    R = build_sensing_matrix(geom, default_grid(geom))
    G = simulate_batch(truth, amp, geom.wavenumbers, cfg.snr_db, cfg.n_realizations, rng,
                       cfg.random_phase)
    power = float(np.sum(np.abs(amp) ** 2))
    sigma2 = power / db_to_linear(cfg.snr_db)
    Q = truth.size
    try:
        X = invert_batch(G, R, cfg.estimator, sigma_eps2=sigma2,
                         prior_power=scene_prior_power(power, R), tol=cfg.cs_tol)
        sel = select_batch(G, R, X, criterion=cfg.criterion)
        k_hat, elev = sel.k_hat, sel.elevation
        # accuracy is scored on the fit of the true order
        known = sel.order_elevation[:, min(Q, 2), :] if Q else elev
    except Exception as exc:  # an estimator failure counts as non-detection
        log.warning("draw failed: %s", exc)
        k_hat = np.zeros(cfg.n_realizations, dtype=np.int8)
        elev = known = np.full((cfg.n_realizations, 2), np.nan)
    det = _batch_detect(k_hat, elev, truth, cfg.window * rho)
    errs = _assign_errors(known, truth)
    snr = db_to_linear(cfg.snr_db)
    c1 = crlb_single(geom, snr, cfg.n_acquisitions)
    if truth.size >= 2:
        kappa = abs(truth[1] - truth[0]) / rho
        c0 = c0_approx(kappa) if kappa > 0 else math.inf
    else:
        c0 = 1.0
    return errs, det, rho, c1, c0, geom.baseline_std


def run_monte_carlo(cfg: SimulationConfig, estimator: str | None = None,
                    threads: int = 1) -> MonteCarloResult:
    """Bias, spread and detection rate over baseline draws and noise realizations.

    Each baseline draw owns a random stream spawned from ``rng_seed``, so the
    result does not depend on ``threads``.
    """
    if estimator is not None:
        cfg = replace(cfg, estimator=estimator)
    if cfg.estimator not in ("svd", "cs", "two-stage"):
        raise ValueError(f"unknown estimator {cfg.estimator!r}")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_baseline_draws)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            draws = list(ex.map(lambda s: _run_draw(cfg, s), seeds))
    else:
        draws = [_run_draw(cfg, s) for s in seeds]

    Q = len(cfg.scatterers)
    biases, variances, nvars, counts = [], [], [], []
    for errs, det, rho, *_ in draws:
        ok = np.all(np.isfinite(errs), axis=1)
        e = errs[ok]
        counts.append(e.shape[0])
        biases.append(e.sum(axis=0) if Q else np.zeros(0))
        if e.shape[0] > 1:
            v = e.var(axis=0, ddof=1)
        else:
            v = np.full(Q, np.nan)
        variances.append(v)
        nvars.append(v / rho ** 2)
    counts = np.array(counts)
    total = int(counts.sum())
    bias = np.sum(biases, axis=0) / total if total else np.full(Q, np.nan)
    w = np.maximum(counts - 1, 0)
    var = np.array(variances)
    nvar = np.array(nvars)
    good = w > 0
    if good.any():
        std = np.sqrt(np.sum(w[good, None] * var[good], axis=0) / w[good].sum())
        nstd = np.sqrt(np.sum(w[good, None] * nvar[good], axis=0) / w[good].sum())
    else:
        std = nstd = np.full(Q, np.nan)

    det_rate = float(np.mean(np.concatenate([d for _, d, *_ in draws])))
    rho_m = float(np.mean([d[2] for d in draws]))
    c1 = math.sqrt(np.mean([d[3] ** 2 for d in draws]))
    c0 = float(np.mean([d[4] for d in draws]))
    sb = float(np.mean([d[5] for d in draws]))
    report = CrlbReport(c1, c0, c0 * c1, sb, c0 * c1 / rho_m)
    return MonteCarloResult(bias, std, det_rate, report, rho_m, nstd, total, nvar, counts)


def double_scene(kappa: float) -> tuple[ScattererSpec, ...]:
    """Ground scatterer at 0 and a facade scatterer at ``kappa`` Rayleigh units."""
    return (ScattererSpec(0.0, 1.0, 0.0), ScattererSpec(float(kappa), 1.0, 0.0))


def scatterer_sets_from_batch(sel) -> list[ScattererSet]:
    return sel.scatterer_sets()
