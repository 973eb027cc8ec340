"""Gaussian-mixture log-likelihood pieces for cells carrying unknown symbols.

Everything here works in noise-normalized units: the received sample is
divided by sigma, so a data cell observes ``y = sqrt(gamma) * c * nu + v`` with
``v ~ CN(0, 1)``.  The theta-dependent part of the log-likelihood is

    Lambda(y, nu) = logsumexp_c( 2 Re{conj(y) sqrt(gamma) c nu} - gamma |c|^2 )

which is what both the LLR moments and the numerical Fisher information use.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .grid import Constellation


def pam_lse(t: np.ndarray, levels: np.ndarray, beta: float) -> np.ndarray:
    """log sum_l exp(t*l - beta*l^2) with max subtraction."""
    a = t[..., None] * levels - beta * levels**2
    return np.logaddexp.reduce(a, axis=-1)


def mixture_lse(u: np.ndarray, amp, constellation: Constellation) -> np.ndarray:
    """logsumexp over symbols of 2 Re{u * amp * c} - amp^2 |c|^2.

    ``u`` is conj(y) * nu.  ``amp`` (sqrt of the per-cell SNR) broadcasts
    against ``u``.  Square alphabets are split into independent I/Q sums.
    """
    u = np.asarray(u)
    amp = np.asarray(amp, dtype=float)
    if constellation.separable:
        s = constellation.pam_scale
        lv = constellation.pam_levels
        k = 2.0 * amp * s
        b = (amp * s) ** 2
        if b.ndim == 0:
            return pam_lse(k * u.real, lv, float(b)) + pam_lse(-k * u.imag, lv, float(b))
        a_i = (k * u.real)[..., None] * lv - b[..., None] * lv**2
        a_q = (-k * u.imag)[..., None] * lv - b[..., None] * lv**2
        return np.logaddexp.reduce(a_i, axis=-1) + np.logaddexp.reduce(a_q, axis=-1)
    c = constellation.symbols
    a = 2.0 * np.real(u[..., None] * c) * amp[..., None] - (amp**2)[..., None] * np.abs(c) ** 2
    return logsumexp(a, axis=-1)


def posterior_weights(u: np.ndarray, amp: float, constellation: Constellation) -> np.ndarray:
    """Posterior symbol probabilities given conj(y)*nu, shape (..., |C|)."""
    c = constellation.symbols
    a = 2.0 * amp * np.real(u[..., None] * c) - amp**2 * np.abs(c) ** 2
    return np.exp(a - logsumexp(a, axis=-1, keepdims=True))


def symbol_orbits(constellation: Constellation) -> list[tuple[complex, int]]:
    """Representatives and sizes of symbol orbits under the rotation the quadrature respects.

    The tensor Gauss-Hermite grid is invariant under quarter turns and sign
    flips, as is circular noise.  When the alphabet shares that symmetry, all
    true symbols of one orbit give identical noise expectations, so one
    representative per orbit suffices.
    """
    r = constellation.rotation_order
    step = 4 if r % 4 == 0 else (2 if r % 2 == 0 else 1)
    rot = np.exp(2j * np.pi / step)
    syms = list(constellation.symbols)
    out = []
    used = np.zeros(len(syms), dtype=bool)
    for i, c in enumerate(syms):
        if used[i]:
            continue
        members = 0
        for q in range(step):
            j = int(np.argmin(np.abs(constellation.symbols - c * rot**q)))
            if not used[j]:
                used[j] = True
                members += 1
        out.append((c, members))
    return out


def data_llr_moments(gamma: float, beta: np.ndarray, constellation: Constellation, rule):
    """Mean and variance of the per-cell LLR under the true hypothesis.

    ``beta`` is the phase of nu_k(theta1) for the cell; the true hypothesis has
    nu = 1.  Expectations are a uniform average over the transmitted symbol of
    2-D Gauss-Hermite sums over the noise.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    amp = np.sqrt(gamma)
    v = rule.complex_nodes(1.0)
    w = rule.tensor_weights()
    nu = np.exp(1j * beta)
    m1 = np.zeros(beta.shape)
    m2 = np.zeros(beta.shape)
    n_c = len(constellation)
    for c0, mult in symbol_orbits(constellation):
        yc = np.conj(amp * c0 + v)
        l0 = mixture_lse(yc, amp, constellation)
        l1 = mixture_lse(yc[None, :] * nu.reshape(-1, 1), amp, constellation)
        llr = l0[None, :] - l1
        m1 += mult * (llr @ w).reshape(beta.shape) / n_c
        m2 += mult * ((llr * llr) @ w).reshape(beta.shape) / n_c
    var = np.maximum(m2 - m1 * m1, 0.0)
    return m1, var


def data_fisher_factor(gamma: float, constellation: Constellation, rule) -> float:
    """E[score^2] / w^2 for one data cell, where w is the per-cell phase slope.

    The score with respect to the ramp phase is 2 sqrt(gamma) E_post[Im{conj(y) c}];
    a known symbol gives exactly 2*gamma*|c|^2.
    """
    amp = np.sqrt(gamma)
    v = rule.complex_nodes(1.0)
    w = rule.tensor_weights()
    c = constellation.symbols
    total = 0.0
    for c0, mult in symbol_orbits(constellation):
        yc = np.conj(amp * c0 + v)
        post = posterior_weights(yc, amp, constellation)
        score = 2.0 * amp * np.sum(post * np.imag(yc[:, None] * c), axis=1)
        total += mult * float(w @ (score * score))
    return total / len(c)
