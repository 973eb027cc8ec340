"""Compiled inner loops for the data-cell likelihood surface."""

from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, fastmath=False)
def _lse_pam(t, b, levels):
    # log sum_l exp(t*l - b*l^2), max-subtracted
    n = levels.shape[0]
    best = -np.inf
    for i in range(n):
        v = t * levels[i] - b * levels[i] * levels[i]
        if v > best:
            best = v
    acc = 0.0
    for i in range(n):
        v = t * levels[i] - b * levels[i] * levels[i]
        acc += math.exp(v - best)
    return best + math.log(acc)


@nb.njit(cache=True)
def data_surface_separable(w, kcoef, bcoef, ez, rot, levels):
    """Sum over cells of F(k*Re u) + F(-k*Im u) with u = w * ez[z] * rot[phi].

    w: conj(y)/sigma per cell; ez: (nz, ncell) delay ramps; rot: phase factors.
    """
    nz = ez.shape[0]
    nc = w.shape[0]
    nphi = rot.shape[0]
    out = np.zeros((nz, nphi))
    for iz in range(nz):
        for c in range(nc):
            base = w[c] * ez[iz, c]
            k = kcoef[c]
            b = bcoef[c]
            for ip in range(nphi):
                u = base * rot[ip]
                out[iz, ip] += _lse_pam(k * u.real, b, levels) + _lse_pam(-k * u.imag, b, levels)
    return out


@nb.njit(cache=True)
def data_surface_generic(w, amp, ez, rot, symbols):
    """Sum over cells of logsumexp_c(2 amp Re{u c} - amp^2 |c|^2)."""
    nz = ez.shape[0]
    nc = w.shape[0]
    nphi = rot.shape[0]
    ns = symbols.shape[0]
    pw = np.empty(ns)
    for s in range(ns):
        pw[s] = symbols[s].real ** 2 + symbols[s].imag ** 2
    vals = np.empty(ns)
    out = np.zeros((nz, nphi))
    for iz in range(nz):
        for c in range(nc):
            base = w[c] * ez[iz, c]
            a = amp[c]
            for ip in range(nphi):
                u = base * rot[ip]
                best = -np.inf
                for s in range(ns):
                    v = 2.0 * a * (u.real * symbols[s].real - u.imag * symbols[s].imag) - a * a * pw[s]
                    vals[s] = v
                    if v > best:
                        best = v
                acc = 0.0
                for s in range(ns):
                    acc += math.exp(vals[s] - best)
                out[iz, ip] += best + math.log(acc)
    return out


# log1p(exp(-x)) on [0, SOFTPLUS_MAX] for linear interpolation; error <= SOFTPLUS_STEP**2 / 32
SOFTPLUS_STEP = 1.0 / 4096
SOFTPLUS_MAX = 40.0
SOFTPLUS_TABLE = np.log1p(np.exp(-np.arange(int(SOFTPLUS_MAX / SOFTPLUS_STEP) + 2) * SOFTPLUS_STEP))


@nb.njit(cache=True, fastmath=True)
def data_surface_binary(w, kcoef, bcoef, ez, rot, table):
    """Two-level PAM per dimension (QPSK): F(t) = |t| + log1p(exp(-2|t|)) - b.

    The log1p(exp(-x)) term is read from ``table`` (step 1/4096); beyond the
    table it is below 5e-18 and dropped.
    """
    nz = ez.shape[0]
    nc = w.shape[0]
    nphi = rot.shape[0]
    inv = 4096.0
    last = table.shape[0] - 2
    out = np.zeros((nz, nphi))
    for iz in range(nz):
        for c in range(nc):
            base = w[c] * ez[iz, c]
            k = kcoef[c]
            b2 = 2.0 * bcoef[c]
            for ip in range(nphi):
                u = base * rot[ip]
                ti = abs(k * u.real)
                tq = abs(k * u.imag)
                acc = ti + tq - b2
                x = 2.0 * ti * inv
                if x < last:
                    j = int(x)
                    acc += table[j] + (x - j) * (table[j + 1] - table[j])
                x = 2.0 * tq * inv
                if x < last:
                    j = int(x)
                    acc += table[j] + (x - j) * (table[j + 1] - table[j])
                out[iz, ip] += acc
    return out
