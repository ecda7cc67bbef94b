"""Model-order selection: parametric refinement of peak candidates and penalized likelihood."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import SensingMatrix
from .inversion import find_peaks_batch
from .scatterers import ScattererSet, ScattererSpec

CRITERIA = ("bic", "aic", "mdl")
K_MAX = 2
_REL_FLOOR = 1e-12  # residual power floor relative to the measurement power


class ModelSelectionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelFit:
    k: int
    scatterers: tuple[ScattererSpec, ...]
    residual_power: float
    neg2loglik: float
    penalty: float
    criterion: str
    converged: bool = True

    @property
    def score(self) -> float:
        return self.neg2loglik + 2 * self.penalty


def penalty(k: int, n: int, criterion: str = "bic") -> float:
    """Complexity term C(K) for 3 real parameters per scatterer and 2N real observations."""
    criterion = criterion.lower()
    if criterion == "aic":
        return 3.0 * k
    if criterion in ("bic", "mdl"):
        return 1.5 * k * math.log(2 * n)
    raise ModelSelectionError(f"unknown criterion {criterion!r}")


def neg2loglik(residual_power, signal_power, n: int):
    """Concentrated -2 ln p of white circular Gaussian residuals."""
    s2 = np.maximum(residual_power, _REL_FLOOR * np.asarray(signal_power) + 1e-300)
    return 2 * n * np.log(np.pi * s2) + 2 * n


# --------------------------------------------------------------------------
# Batched Levenberg-Marquardt over (elevation, complex amplitude)
# --------------------------------------------------------------------------

def _steer(k, s):
    # (B, N, K)
    return np.exp(-1j * k[None, :, None] * s[:, None, :])


def _ls_amplitudes(E, g, ridge=1e-12):
    EH = np.conj(np.swapaxes(E, 1, 2))
    A = EH @ E
    A = A + ridge * np.trace(A, axis1=1, axis2=2).real[:, None, None] * np.eye(E.shape[2])
    return np.linalg.solve(A, (EH @ g[:, :, None]))[:, :, 0]


def _residual(k, g, s, a):
    return g - np.einsum("bnk,bk->bn", _steer(k, s), a)


def refine(G, k, s0, lo=None, hi=None, max_iter: int = 60, tol: float = 1e-12):
    """Bounded Levenberg-Marquardt fit of ``g ~ sum_q a_q exp(-j k s_q)``.

    Parameters
    ----------
    G : (N, B) complex
    k : (N,) wavenumbers
    s0 : (B, K) starting elevations
    lo, hi : (B, K) box bounds on the elevations; ``None`` leaves them free.

    Returns
    -------
    s, a, cost, converged
        ``cost`` is the squared residual norm; ``converged`` is False where
        the iteration produced non-finite values, in which case the start
        elevations with least-squares amplitudes are returned.
    """
    g = np.asarray(G, dtype=complex).T
    s = np.array(s0, dtype=float)
    B, K = s.shape
    N = k.size
    if lo is None:
        lo = np.full_like(s, -np.inf)
    if hi is None:
        hi = np.full_like(s, np.inf)
    s = np.clip(s, lo, hi)
    a = _ls_amplitudes(_steer(k, s), g)
    s_init, a_init = s.copy(), a.copy()
    cost = np.sum(np.abs(_residual(k, g, s, a)) ** 2, axis=1)
    mu = np.full(B, 1e-3)
    active = np.ones(B, dtype=bool)
    P = 3 * K
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        sb, ab, gb = s[idx], a[idx], g[idx]
        E = _steer(k, sb)
        r = gb - np.einsum("bnk,bk->bn", E, ab)
        Jc = np.concatenate([1j * k[None, :, None] * ab[:, None, :] * E, -E, -1j * E], axis=2)
        J = np.concatenate([Jc.real, Jc.imag], axis=1)
        rv = np.concatenate([r.real, r.imag], axis=1)
        H = np.swapaxes(J, 1, 2) @ J
        grad = np.einsum("bmp,bm->bp", J, rv)
        d = np.diagonal(H, axis1=1, axis2=2)
        damp = mu[idx, None] * (d + 1e-12 * d.max(axis=1, keepdims=True))
        Hd = H + damp[:, :, None] * np.eye(P)
        try:
            delta = np.linalg.solve(Hd, -grad[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            delta = np.stack([np.linalg.lstsq(h, -gr, rcond=None)[0] for h, gr in zip(Hd, grad)])
        s_new = np.clip(sb + delta[:, :K], lo[idx], hi[idx])
        a_new = ab + delta[:, K:2 * K] + 1j * delta[:, 2 * K:]
        c_new = np.sum(np.abs(gb - np.einsum("bnk,bk->bn", _steer(k, s_new), a_new)) ** 2, axis=1)
        ok = np.isfinite(c_new) & (c_new < cost[idx])
        gain = np.where(ok, (cost[idx] - c_new) / np.maximum(cost[idx], 1e-300), 0.0)
        acc = idx[ok]
        s[acc], a[acc], cost[acc] = s_new[ok], a_new[ok], c_new[ok]
        mu[idx] = np.where(ok, mu[idx] / 3, mu[idx] * 4)
        done = (ok & (gain < tol)) | (mu[idx] > 1e12) | (cost[idx] <= 1e-30 * np.sum(np.abs(gb) ** 2, axis=1))
        active[idx[done]] = False
    conv = np.isfinite(cost) & np.all(np.isfinite(s), axis=1) & np.all(np.isfinite(a), axis=1)
    if not conv.all():
        bad = ~conv
        s[bad], a[bad] = s_init[bad], a_init[bad]
        cost[bad] = np.sum(np.abs(_residual(k, g[bad], s[bad], a[bad])) ** 2, axis=1)
    return s, a, cost, conv


# --------------------------------------------------------------------------
# Per-pixel API
# --------------------------------------------------------------------------

def _bounds(s0, bound):
    if bound is None:
        return None, None
    return s0 - bound, s0 + bound


def fit_k(g, R: SensingMatrix, candidates, k: int, criterion: str = "bic",
          bound: float | None = None, n_starts: int = 3) -> ModelFit:
    """Fit ``k`` scatterers started from peak candidates.

    Every ``k``-subset of the ``n_starts`` strongest candidates is refined
    and the one with the smallest residual is kept. ``bound`` limits how far
    each elevation may move from its start; the default is two grid steps,
    so the estimator's own resolution decides which scatterers separate.
    """
    g = np.asarray(g, dtype=complex).ravel()
    n = g.size
    if k < 0:
        raise ModelSelectionError("k must be >= 0")
    if k > len(candidates):
        raise ModelSelectionError(f"k = {k} exceeds the {len(candidates)} available candidates")
    power = float(np.vdot(g, g).real) / n
    if k == 0:
        res = power
        return ModelFit(0, (), res, float(neg2loglik(res, power, n)), penalty(0, n, criterion),
                        criterion.lower())
    cand = sorted(candidates, key=lambda c: -c.amplitude)[:max(n_starts, k)]
    if bound is None:
        bound = 2 * R.grid.spacing
    best = None
    for combo in itertools.combinations(range(len(cand)), k):
        s0 = np.array([[cand[i].elevation for i in combo]])
        s, a, cost, conv = refine(g[:, None], R.wavenumbers, s0, s0 - bound, s0 + bound)
        if best is None or cost[0] < best[2]:
            best = (s[0], a[0], float(cost[0]), bool(conv[0]))
    s, a, cost, conv = best
    res = cost / n
    sc = tuple(sorted((ScattererSpec.from_complex(si, ai) for si, ai in zip(s, a)),
                      key=lambda c: c.elevation))
    return ModelFit(k, sc, res, float(neg2loglik(res, power, n)), penalty(k, n, criterion),
                    criterion.lower(), conv)


def select_order(fits, criterion: str | None = None) -> tuple[int, ScattererSet]:
    """Order minimizing the penalized score; ties go to the smaller order."""
    fits = list(fits)
    if not fits:
        raise ModelSelectionError("no fits to select from")
    crit = {f.criterion for f in fits}
    if criterion is not None:
        crit.add(criterion.lower())
    if len(crit) != 1:
        raise ModelSelectionError("fits were scored with different criteria")
    best = min(fits, key=lambda f: (f.score, f.k))
    return best.k, ScattererSet(best.scatterers, best.k)


# --------------------------------------------------------------------------
# Batched selection over many pixels
# --------------------------------------------------------------------------

@dataclass
class BatchSelection:
    k_hat: np.ndarray          # (B,) int8
    elevation: np.ndarray      # (B, K_MAX), NaN where absent, sorted ascending
    amplitude: np.ndarray      # (B, K_MAX) complex
    scores: np.ndarray         # (B, K_MAX + 1)
    converged: np.ndarray      # (B,) bool
    order_elevation: np.ndarray  # (B, K_MAX + 1, K_MAX) best fit of every order

    def scatterer_sets(self) -> list[ScattererSet]:
        out = []
        for kk, s, a in zip(self.k_hat, self.elevation, self.amplitude):
            sc = tuple(ScattererSpec.from_complex(s[i], a[i]) for i in range(K_MAX) if np.isfinite(s[i]))
            out.append(ScattererSet(sc, int(kk)))
        return out


def select_batch(G, R: SensingMatrix, X, k_max: int = K_MAX, criterion: str = "bic",
                 bound: float | None = None, n_starts: int = 3) -> BatchSelection:
    """Peak extraction, refinement and order selection for every column of ``G``.

    ``X`` holds the reflectivity profiles (L, B) from which candidates are
    taken. Same start and bound rules as :func:`fit_k`.
    """
    if not 0 <= k_max <= K_MAX:
        raise ModelSelectionError(f"k_max must be in [0, {K_MAX}]")
    G = np.asarray(G, dtype=complex)
    N, B = G.shape
    k = R.wavenumbers
    grid = R.grid.samples
    step = R.grid.spacing
    if bound is None:
        bound = 2 * step
    M = max(n_starts, k_max, 1)
    index, offset, count = find_peaks_batch(X, M)
    cand = np.where(index >= 0, grid[np.clip(index, 0, None)] + offset * step, np.nan)
    power = np.sum(np.abs(G) ** 2, axis=0) / N
    scores = np.full((B, K_MAX + 1), np.inf)
    scores[:, 0] = neg2loglik(power, power, N) + 2 * penalty(0, N, criterion)
    elev = np.full((B, K_MAX + 1, K_MAX), np.nan)
    amp = np.zeros((B, K_MAX + 1, K_MAX), dtype=complex)
    conv = np.ones(B, dtype=bool)
    for kk in range(1, k_max + 1):
        best = np.full(B, np.inf)
        for combo in itertools.combinations(range(M), kk):
            cols = np.flatnonzero(count > max(combo))
            if cols.size == 0:
                continue
            s0 = cand[cols][:, list(combo)]
            s, a, cost, c = refine(G[:, cols], k, s0, s0 - bound, s0 + bound)
            better = cost < best[cols]
            cols, s, a, cost, c = cols[better], s[better], a[better], cost[better], c[better]
            order = np.argsort(s, axis=1)
            best[cols] = cost
            elev[cols, kk, :kk] = np.take_along_axis(s, order, axis=1)
            amp[cols, kk, :kk] = np.take_along_axis(a, order, axis=1)
            conv[cols] &= c
        ok = np.isfinite(best)
        scores[ok, kk] = neg2loglik(best[ok] / N, power[ok], N) + 2 * penalty(kk, N, criterion)
    k_hat = np.argmin(scores, axis=1)  # first minimum -> smaller order on ties
    rows = np.arange(B)
    return BatchSelection(k_hat.astype(np.int8), elev[rows, k_hat], amp[rows, k_hat], scores, conv,
                          elev)
