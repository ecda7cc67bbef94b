"""Compiled inner loops. Complex data is passed as separate real/imag planes."""

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True, nogil=True)
def _lasso_column(Ar, Ai, g_r, g_i, lam, step, tol, max_iter, xr, xi):
    N, L = Ar.shape
    axr = np.zeros(N)
    axi = np.zeros(N)
    f = 0.0
    for l in range(L):
        if xr[l] != 0.0 or xi[l] != 0.0:
            f += lam * math.sqrt(xr[l] ** 2 + xi[l] ** 2)
            for n in range(N):
                axr[n] += Ar[n, l] * xr[l] - Ai[n, l] * xi[l]
                axi[n] += Ar[n, l] * xi[l] + Ai[n, l] * xr[l]
    for n in range(N):
        f += 0.5 * ((axr[n] - g_r[n]) ** 2 + (axi[n] - g_i[n]) ** 2)
    yr = xr.copy()
    yi = xi.copy()
    ayr = axr.copy()
    ayi = axi.copy()
    xpr = xr.copy()
    xpi = xi.copy()
    axpr = axr.copy()
    axpi = axi.copy()
    zr = np.empty(L)
    zi = np.empty(L)
    azr = np.empty(N)
    azi = np.empty(N)
    rr = np.empty(N)
    ri = np.empty(N)
    t = 1.0
    it = 0
    conv = False
    tau = step * lam
    while it < max_iter:
        it += 1
        for n in range(N):
            rr[n] = ayr[n] - g_r[n]
            ri[n] = ayi[n] - g_i[n]
            azr[n] = 0.0
            azi[n] = 0.0
        fz = 0.0
        for l in range(L):
            cr = 0.0
            ci = 0.0
            for n in range(N):
                cr += Ar[n, l] * rr[n] + Ai[n, l] * ri[n]
                ci += Ar[n, l] * ri[n] - Ai[n, l] * rr[n]
            vr = yr[l] - step * cr
            vi = yi[l] - step * ci
            m = math.sqrt(vr * vr + vi * vi)
            if m > tau:
                s = 1.0 - tau / m
                a = vr * s
                b = vi * s
                zr[l] = a
                zi[l] = b
                fz += lam * (m - tau)
                for n in range(N):
                    azr[n] += Ar[n, l] * a - Ai[n, l] * b
                    azi[n] += Ar[n, l] * b + Ai[n, l] * a
            else:
                zr[l] = 0.0
                zi[l] = 0.0
        for n in range(N):
            fz += 0.5 * ((azr[n] - g_r[n]) ** 2 + (azi[n] - g_i[n]) ** 2)
        plain = t == 1.0
        beta = 0.0
        if fz <= f:
            rel = (f - fz) / max(abs(f), 1e-300)
            for l in range(L):
                xpr[l] = xr[l]
                xpi[l] = xi[l]
                xr[l] = zr[l]
                xi[l] = zi[l]
            for n in range(N):
                axpr[n] = axr[n]
                axpi[n] = axi[n]
                axr[n] = azr[n]
                axi[n] = azi[n]
            f = fz
            if rel < tol:
                if plain:
                    conv = True
                    break
                t = 1.0
            else:
                tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                beta = (t - 1.0) / tn
                t = tn
        else:
            t = 1.0
        for l in range(L):
            yr[l] = xr[l] + beta * (xr[l] - xpr[l])
            yi[l] = xi[l] + beta * (xi[l] - xpi[l])
        for n in range(N):
            ayr[n] = axr[n] + beta * (axr[n] - axpr[n])
            ayi[n] = axi[n] + beta * (axi[n] - axpi[n])
    return f, it, conv


@numba.njit(cache=True, nogil=True)
def lasso_batch(Ar, Ai, Gr, Gi, lam, step, tol, max_iter, Xr, Xi):
    """Monotone FISTA with restart, one column at a time; X is updated in place."""
    B = Gr.shape[1]
    F = np.empty(B)
    iters = np.empty(B, np.int64)
    conv = np.empty(B, np.bool_)
    for b in range(B):
        xr = Xr[:, b].copy()
        xi = Xi[:, b].copy()
        f, i, c = _lasso_column(Ar, Ai, Gr[:, b].copy(), Gi[:, b].copy(), lam[b], step, tol,
                                max_iter, xr, xi)
        Xr[:, b] = xr
        Xi[:, b] = xi
        F[b] = f
        iters[b] = i
        conv[b] = c
    return F, iters, conv
