import math

import numpy as np
import pytest

from conftest import correlated_pair
from nltomo.nlfilter import (EmptyNeighborhoodError, FilterError, FilterParams, InterferometricStack,
                             SingularCoherenceError, boxcar_filter, calibrate_bandwidth, filter_interferogram,
                             filter_stack, goodman_loglik, nl_weights, patch_dissimilarity, wmle_estimate)


def test_stack_validation():
    with pytest.raises(FilterError):
        InterferometricStack(np.ones((2, 4, 4)), np.ones((2, 4, 5)))
    with pytest.raises(FilterError):
        InterferometricStack(np.full((4, 4), np.nan), np.ones((4, 4)))
    st = InterferometricStack(np.ones((4, 5)), 1j * np.ones((4, 5)))
    assert st.n == 1 and st.shape == (4, 5)
    assert np.allclose(st.phi, math.pi / 2)


def test_from_triplets_roundtrip(rng):
    i1, i2 = rng.uniform(0.5, 2, (2, 3, 3))
    phi = rng.uniform(-3, 3, (3, 3))
    st = InterferometricStack.from_triplets(i1, i2, phi)
    assert np.allclose(st.i1[0], i1) and np.allclose(st.i2[0], i2) and np.allclose(st.phi[0], phi)


def test_goodman_errors_and_peak():
    with pytest.raises(SingularCoherenceError):
        goodman_loglik(1, 1, 0, 0, 1.0, 1)
    with pytest.raises(FilterError):
        goodman_loglik(1, 1, 0, 0, 0.5, 0)
    psis = np.linspace(-3, 3, 61)
    ll = goodman_loglik(1.0, 1.0, 0.7, psis, 0.8, 1.0)
    assert psis[np.argmax(ll)] == pytest.approx(0.7, abs=0.06)


def test_patch_dissimilarity_identical_patch_is_zero(rng):
    a, b = correlated_pair((15, 15), 0.8, 0.2, rng)
    st = InterferometricStack(a, b)
    assert patch_dissimilarity(st, (7, 7), (7, 7)) == pytest.approx(0.0, abs=1e-9)
    d1 = patch_dissimilarity(st, (7, 7), (5, 9))
    assert d1 == pytest.approx(patch_dissimilarity(st, (5, 9), (7, 7)))
    assert d1 > 0


def test_phase_weight_separates_regions(rng):
    psi = np.where(np.arange(32)[None, :] < 16, 0.0, math.pi) * np.ones((32, 1))
    a, b = correlated_pair((32, 32), 0.95, psi, rng)
    st = InterferometricStack(a, b)
    same = patch_dissimilarity(st, (16, 5), (16, 10), gamma=1.0)
    diff = patch_dissimilarity(st, (16, 5), (16, 24), gamma=1.0)
    assert diff > same
    assert patch_dissimilarity(st, (16, 5), (16, 24), gamma=0.0) < diff


def test_nl_weights_shape_and_centre(rng):
    a, b = correlated_pair((30, 30), 0.7, 0.0, rng)
    w = nl_weights(InterferometricStack(a, b), (2, 2), search_size=11, patch_size=5, h=5.0)
    assert w.shape == (11, 11)
    assert np.isnan(w[0, 0])
    fin = w[np.isfinite(w)]
    assert np.all((fin >= 0) & (fin <= 1))
    assert w[5, 5] == fin.max()
    with pytest.raises(FilterError):
        nl_weights(InterferometricStack(a, b), (2, 2), search_size=10)


def test_wmle_single_pixel():
    psi, mu, s2 = wmle_estimate(np.array([1.0]), np.array([1j]), np.array([1.0]))
    assert psi == pytest.approx(math.pi / 2)
    assert mu == pytest.approx(1.0)
    assert s2 == pytest.approx(0.5)


def test_wmle_errors():
    with pytest.raises(EmptyNeighborhoodError):
        wmle_estimate(np.ones(3), np.ones(3), np.zeros(3))
    with pytest.raises(FilterError):
        wmle_estimate(np.ones(3), np.ones(3), np.array([1.0, -1.0, 1.0]))


def test_wmle_coherence_forms(rng):
    a, b = correlated_pair(4000, 0.7, 0.4, rng)
    w = np.ones(a.size)
    _, mu_mod, _ = wmle_estimate(a, b, w)
    _, mu_amp, _ = wmle_estimate(a, b, w, coherence="amplitude")
    assert mu_mod == pytest.approx(0.7, abs=0.03)
    assert mu_amp > mu_mod


def test_filter_params_validation():
    with pytest.raises(FilterError):
        FilterParams(patch=6)
    with pytest.raises(FilterError):
        FilterParams(bandwidth=0.0)
    with pytest.raises(FilterError):
        FilterParams(weights="triple")


def test_calibrated_bandwidth_positive():
    assert calibrate_bandwidth() > 0
    assert calibrate_bandwidth(floor_percentile=None) > calibrate_bandwidth()


def test_filter_reduces_phase_noise(rng):
    a, b = correlated_pair((48, 48), 0.7, 0.3, rng)
    f = filter_interferogram(a, b)
    inner = (slice(8, -8),) * 2
    raw = np.angle(np.exp(1j * (np.angle(b * np.conj(a)) - 0.3)))[inner]
    flt = np.angle(np.exp(1j * (f.psi - 0.3)))[inner]
    assert flt.std() < raw.std() / 3
    assert np.all(f.effective_looks >= 1)
    assert np.all((f.mu >= 0) & (f.mu <= 1))
    assert np.allclose(np.angle(f.interferogram[inner]), f.psi[inner])


def test_filter_stack_too_small():
    st = InterferometricStack(np.ones((1, 10, 10)), np.ones((1, 10, 10)))
    with pytest.raises(FilterError):
        filter_stack(st)


def test_filter_stack_joint_and_threads(rng):
    a, b = correlated_pair((2, 24, 24), 0.8, 0.1, rng)
    st = InterferometricStack(a, b)
    p = FilterParams(search=11, patch=5)
    one = filter_stack(st, p)
    many = filter_stack(st, p, threads=2)
    assert all(np.array_equal(x.psi, y.psi) for x, y in zip(one, many))
    joint = filter_stack(st, FilterParams(search=11, patch=5, weights="joint"))
    assert len(joint) == 2 and joint[0].psi.shape == (24, 24)


def test_boxcar_constant_phase():
    g1 = np.ones((1, 9, 9), dtype=complex)
    st = InterferometricStack(g1, g1 * np.exp(0.4j))
    f = boxcar_filter(st, 3)[0]
    assert np.allclose(f.psi, 0.4) and np.allclose(f.mu, 1.0)
    assert np.allclose(f.effective_looks, 9)
