import numpy as np
import pytest

from nltomo.geometry import MUNICH_GEOMETRY, build_sensing_matrix, default_grid
from nltomo.inversion import extract_peaks, svd_invert, NoiseModel
from nltomo.modelsel import (ModelSelectionError, fit_k, neg2loglik, penalty, refine, select_batch,
                             select_order)
from nltomo.scatterers import ScattererSpec
from nltomo.simulation import simulate_measurements


@pytest.fixture(scope="module")
def R():
    return build_sensing_matrix(MUNICH_GEOMETRY, default_grid(MUNICH_GEOMETRY))


def _fits(g, R, criterion="bic"):
    prof = svd_invert(g, R, NoiseModel(1e-3), 1.0)
    cand = extract_peaks(prof, 3)
    return [fit_k(g, R, cand, k, criterion) for k in range(0, min(2, len(cand)) + 1)]


def test_penalties():
    assert penalty(0, 5) == 0
    assert penalty(1, 5, "aic") == 3.0
    assert penalty(2, 5, "bic") == pytest.approx(3 * np.log(10))
    assert penalty(2, 5, "mdl") == penalty(2, 5, "bic")
    with pytest.raises(ModelSelectionError):
        penalty(1, 5, "hqc")


def test_neg2loglik_form():
    assert neg2loglik(0.5, 1.0, 5) == pytest.approx(10 * np.log(np.pi * 0.5) + 10)


def test_null_fit():
    g = np.ones(5, dtype=complex)
    f = fit_k(g, None, [], 0)
    assert f.k == 0 and f.residual_power == pytest.approx(1.0)


@pytest.mark.parametrize("criterion", ["bic", "aic", "mdl"])
def test_noiseless_single(R, criterion):
    g = simulate_measurements([ScattererSpec(23.4, 1.0, 0.3)], MUNICH_GEOMETRY, None)
    fits = _fits(g, R, criterion)
    assert fits[1].residual_power < 1e-10
    k, sset = select_order(fits)
    assert k == 1
    assert sset.scatterers[0].elevation == pytest.approx(23.4, abs=1e-4)


def test_fit_k_too_many(R):
    with pytest.raises(ModelSelectionError):
        fit_k(np.ones(5), R, [ScattererSpec(0.0)], 2)


def test_select_order_errors():
    with pytest.raises(ModelSelectionError):
        select_order([])
    g = np.ones(5, dtype=complex)
    with pytest.raises(ModelSelectionError):
        select_order([fit_k(g, None, [], 0, "bic"), fit_k(g, None, [], 0, "aic")])


def test_refine_recovers_offgrid(R):
    k = R.wavenumbers
    g = 1.5 * np.exp(-1j * k * 12.34)
    s, a, cost, conv = refine(g[:, None], k, np.array([[11.0]]), np.array([[5.0]]), np.array([[20.0]]))
    assert s[0, 0] == pytest.approx(12.34, abs=1e-6)
    assert abs(a[0, 0]) == pytest.approx(1.5, abs=1e-6)


def test_select_batch_matches_pixelwise_shapes(R, rng):
    G = np.stack([simulate_measurements([ScattererSpec(0.0), ScattererSpec(80.0)], MUNICH_GEOMETRY, 25.0, rng)
                  for _ in range(6)], 1)
    X = R.entries.conj().T @ G
    sel = select_batch(G, R, X)
    assert sel.k_hat.shape == (6,)
    assert sel.scores.shape == (6, 3) and sel.order_elevation.shape == (6, 3, 2)
    for row, kk in zip(sel.elevation, sel.k_hat):
        assert np.sum(np.isfinite(row)) == kk
    assert np.mean(sel.k_hat == 2) >= 0.5
    sets = sel.scatterer_sets()
    assert len(sets) == 6
    with pytest.raises(ModelSelectionError):
        select_batch(G, R, X, k_max=3)


def test_aic_selects_at_least_bic(R, rng):
    G = np.sqrt(0.5) * (rng.standard_normal((5, 200)) + 1j * rng.standard_normal((5, 200)))
    X = R.entries.conj().T @ G
    a = select_batch(G, R, X, criterion="aic").k_hat
    b = select_batch(G, R, X, criterion="bic").k_hat
    assert np.all(a >= b)
