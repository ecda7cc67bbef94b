"""Property-based checks of the invariants each component promises."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nltomo.crlb import c0_approx, crlb_report, crlb_single
from nltomo.fusion import FusionParams, m_estimate, mad_scale, tukey_weight
from nltomo.geo import (GeocodeFrame, PolygonSamples, citywide_histogram, geocode, icp_align, inverse_geocode,
                        structure_stats)
from nltomo.geometry import MUNICH_GEOMETRY, AcquisitionGeometry, build_sensing_matrix, default_grid
from nltomo.inversion import cs_solve, default_lambda, kkt_residual, lasso_objective, svd_solve
from nltomo.modelsel import K_MAX, select_batch
from nltomo.nlfilter import FilterParams, filter_interferogram, wmle_estimate

finite = dict(allow_nan=False, allow_infinity=False)
baselines = st.lists(st.floats(-300, 300, **finite), min_size=2, max_size=8).filter(lambda b: np.ptp(b) > 5)
complex_vec = st.lists(st.tuples(st.floats(-5, 5, **finite), st.floats(-5, 5, **finite)), min_size=5,
                       max_size=5).map(lambda v: np.array([complex(a, b) for a, b in v]))
R_MUNICH = build_sensing_matrix(MUNICH_GEOMETRY, default_grid(MUNICH_GEOMETRY))
SLOW = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


# ---------------------------------------------------------------- core model

@given(baselines)
def test_sensing_matrix_unit_modulus(b):
    g = MUNICH_GEOMETRY.with_baselines(b)
    R = build_sensing_matrix(g, default_grid(g))
    assert np.allclose(np.abs(R.entries), 1.0)


@given(st.integers(1, 40), st.floats(0.01, 1e4, **finite), st.integers(1, 40), st.floats(0.01, 1e4, **finite))
def test_crlb_scales_with_inverse_sqrt_nsnr(n1, s1, n2, s2):
    a, b = crlb_single(MUNICH_GEOMETRY, s1, n1), crlb_single(MUNICH_GEOMETRY, s2, n2)
    assert a / b == pytest.approx(math.sqrt((n2 * s2) / (n1 * s1)), rel=1e-12)


@given(st.floats(1e-3, 100, **finite))
def test_c0_approx_at_least_one(k):
    assert c0_approx(k) >= 1.0
    if k >= 1.7:
        assert c0_approx(k) == 1.0


@given(st.floats(0.1, 10, **finite), st.floats(1, 1000, **finite))
def test_normalized_crlb_invariant_to_lambda_r_split(scale, snr):
    g = MUNICH_GEOMETRY
    h = AcquisitionGeometry(g.wavelength * scale, g.range_center / scale, g.incidence_angle, g.baselines)
    assert crlb_report(h, snr).normalized == pytest.approx(crlb_report(g, snr).normalized, rel=1e-9)


# ---------------------------------------------------------------- filter

pairs = st.integers(2, 30).flatmap(lambda n: st.tuples(
    arrays(complex, n, elements=st.complex_numbers(max_magnitude=10, **finite)),
    arrays(complex, n, elements=st.complex_numbers(max_magnitude=10, **finite)),
    arrays(float, n, elements=st.floats(0, 1, **finite))))


@given(pairs, st.floats(-math.pi, math.pi, **finite))
def test_wmle_phase_rotation_and_symmetry(sample, alpha):
    g1, g2, w = sample
    assume(w.sum() > 1e-3)
    cross = np.sum(w * g1 * np.conj(g2))
    assume(abs(cross) > 1e-6)
    psi, mu, s2 = wmle_estimate(g1, g2, w)
    psi_r, mu_r, s2_r = wmle_estimate(g1, g2 * np.exp(1j * alpha), w)
    assert np.angle(np.exp(1j * (psi_r - psi - alpha))) == pytest.approx(0.0, abs=1e-7)
    assert mu_r == pytest.approx(mu, abs=1e-9)
    assert 0.0 <= mu <= 1.0
    assert wmle_estimate(g2, g1, w)[2] == pytest.approx(s2, rel=1e-12)


@given(arrays(complex, 12, elements=st.complex_numbers(min_magnitude=0.1, max_magnitude=10, **finite)),
       st.floats(-3, 3, **finite))
def test_wmle_unit_coherence_when_aligned(g1, phase):
    assert wmle_estimate(g1, g1 * np.exp(1j * phase), np.ones(12))[1] == pytest.approx(1.0, abs=1e-12)


@SLOW
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 4))
def test_filter_commutes_with_translation(seed, dy, dx):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    b = 0.8 * a + 0.6 * (rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30)))
    p = FilterParams(patch=3, search=7, bandwidth=2.0)
    f = filter_interferogram(a, b, p).psi
    g = filter_interferogram(np.roll(a, (dy, dx), (0, 1)), np.roll(b, (dy, dx), (0, 1)), p).psi
    m = 5 + 4
    inner = np.s_[m:-m, m:-m]
    assert np.allclose(np.roll(f, (dy, dx), (0, 1))[inner], g[inner], atol=1e-9)


# ---------------------------------------------------------------- inversion

@given(complex_vec, complex_vec, st.floats(-3, 3, **finite), st.floats(-3, 3, **finite))
def test_svd_linear(g1, g2, a, b):
    x = svd_solve(a * g1 + b * g2, R_MUNICH, 0.3, 0.02)
    y = a * svd_solve(g1, R_MUNICH, 0.3, 0.02) + b * svd_solve(g2, R_MUNICH, 0.3, 0.02)
    assert np.max(np.abs(x - y)) <= 1e-10


@SLOW
@given(complex_vec, st.floats(0.05, 0.9, **finite))
def test_lasso_monotone_and_kkt(g, frac):
    assume(np.linalg.norm(g) > 0.1)
    lam = float(default_lambda(g, R_MUNICH, frac))
    prev = math.inf
    X = None
    for iters in (5, 20, 80, 320):
        X = cs_solve(g, R_MUNICH, lam, tol=0.0, max_iter=iters).X
        obj = float(lasso_objective(X[:, None], g[:, None], R_MUNICH.entries, lam)[0])
        assert obj <= prev + 1e-12 * max(1.0, abs(prev))
        prev = obj
    X = cs_solve(g, R_MUNICH, lam, tol=1e-15, max_iter=50000).X
    assert kkt_residual(X, g, R_MUNICH, lam) <= 1e-6 * max(1.0, lam)


# ---------------------------------------------------------------- model selection

@SLOW
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100, **finite), st.floats(-3, 3, **finite))
def test_selection_invariant_to_complex_scaling(seed, scale, phase):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((5, 8)) + 1j * rng.standard_normal((5, 8))
    G[:, :4] += 3 * R_MUNICH.steering([20.0])
    c = scale * np.exp(1j * phase)
    X = R_MUNICH.entries.conj().T @ G
    a = select_batch(G, R_MUNICH, X)
    b = select_batch(c * G, R_MUNICH, c * X)
    assert np.array_equal(a.k_hat, b.k_hat)
    assert np.all(a.k_hat <= K_MAX)
    fin = np.isfinite(a.elevation)
    assert np.allclose(a.elevation[fin], b.elevation[fin], atol=1e-5)


# ---------------------------------------------------------------- fusion

samples = arrays(float, st.integers(3, 40), elements=st.floats(-100, 100, **finite))


@given(samples, st.floats(-1e3, 1e3, **finite))
def test_m_estimate_translation(x, c):
    assume(mad_scale(x) > 1e-3)
    assert m_estimate(x + c).value == pytest.approx(m_estimate(x).value + c, abs=1e-4 * (1 + mad_scale(x)))


@given(samples, st.floats(0.01, 100, **finite))
def test_m_estimate_scale(x, a):
    assume(mad_scale(x) > 1e-3)
    assert m_estimate(a * x).value == pytest.approx(a * m_estimate(x).value,
                                                    abs=1e-4 * a * (1 + mad_scale(x)))


@given(st.integers(0, 2 ** 31 - 1), st.integers(10, 60), st.floats(0.0, 0.4), st.floats(-1e3, 1e3, **finite))
def test_m_estimate_breakdown(seed, n, frac, outlier):
    rng = np.random.default_rng(seed)
    inl = rng.normal(0.0, 1.0, n)
    k = int(frac * n)
    scale = mad_scale(inl)
    assume(scale > 0.3)
    x = inl.copy()
    x[:k] = outlier
    clean = m_estimate(inl[k:]).value if k else m_estimate(inl).value
    assume(abs(outlier - clean) > 20 * scale or k == 0)
    assert abs(m_estimate(x).value - clean) < 0.5 * mad_scale(inl[k:]) + 0.5 * scale * (k > 0)


@given(st.floats(0, 10, **finite), st.floats(0, 10, **finite))
def test_tukey_weight_non_increasing(a, b):
    lo, hi = sorted((a, b))
    assert tukey_weight(hi) <= tukey_weight(lo)
    assert tukey_weight(-hi) == tukey_weight(hi)


# ---------------------------------------------------------------- geo

@given(arrays(float, (10, 3), elements=st.floats(-500, 500, **finite)), st.floats(0, 360, **finite),
       st.floats(0.2, 1.3, **finite))
def test_geocode_roundtrip(pix, heading, theta):
    f = GeocodeFrame((10.0, -20.0, 3.0), theta, heading)
    assert np.allclose(inverse_geocode(geocode(pix, f), f), pix, atol=1e-6)


@SLOW
@given(st.integers(0, 2 ** 31 - 1), arrays(float, 3, elements=st.floats(-3, 3, **finite)))
def test_icp_rms_non_increasing(seed, t):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 30, (80, 3))
    res = icp_align(p + t + rng.normal(0, 0.05, p.shape), p)
    assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))


@given(arrays(float, 12, elements=st.floats(0, 60, **finite)), arrays(float, 12, elements=st.floats(-5, 5, **finite)),
       st.floats(-100, 100, **finite))
def test_relative_height_shift_invariant(top, bot, c):
    s = [PolygonSamples("a", top, bot)]
    t = [PolygonSamples("a", top + c, bot + c)]
    for fusion in (None, FusionParams()):
        assert structure_stats(t, fusion=fusion)[0].relative_height == pytest.approx(
            structure_stats(s, fusion=fusion)[0].relative_height, abs=1e-6)


@given(arrays(float, st.integers(1, 50), elements=st.floats(-30, 30, **finite)))
def test_histogram_fractions_monotone(d):
    h = citywide_histogram(d)
    assert h.frac_1m <= h.frac_2m <= h.frac_15m
