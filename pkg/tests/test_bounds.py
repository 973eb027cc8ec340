import math

import numpy as np
import pytest

from ofdm_pnt.bounds import UnboundedVarianceError, crlb_data_exact, crlb_mcrlb, crlb_pilot
from ofdm_pnt.channel import make_flat_channel
from ofdm_pnt.grid import Constellation, OfdmParams, ResourceGrid, ThetaParams
from ofdm_pnt.mixture import data_fisher_factor
from ofdm_pnt.quadrature import GaussHermiteRule

from oracles import mc_phase_score_power, two_pilot_fisher


def _flat(grid, snr_db):
    return make_flat_channel(grid, 10 ** (snr_db / 10), ThetaParams(0, 0), 1.0)


def test_single_dc_pilot_is_unbounded(k64):
    g = ResourceGrid.from_state(k64, np.where(np.arange(64) == 0, 1, 0)[None, :])
    with pytest.raises(UnboundedVarianceError):
        crlb_pilot(g, _flat(g, 10))


def test_two_pilot_fisher_closed_form(k64):
    k = [16, 64 - 16]
    g = ResourceGrid.from_state(k64, np.isin(np.arange(64), k).astype(np.int8)[None, :])
    r = crlb_pilot(g, _flat(g, 0))
    assert r.fisher == pytest.approx(8 * math.pi**2 * 15000**2 * 512, rel=1e-12)
    assert r.fisher == pytest.approx(two_pilot_fisher(15e3, [16, -16], 1.0), rel=1e-12)


def test_pilot_variance_halves_when_snr_doubles(fig2_grid):
    a = crlb_pilot(fig2_grid, make_flat_channel(fig2_grid, 2.0, ThetaParams(0, 0), 1.0))
    b = crlb_pilot(fig2_grid, make_flat_channel(fig2_grid, 4.0, ThetaParams(0, 0), 1.0))
    assert b.variance == pytest.approx(a.variance / 2, rel=1e-12)


def test_mcrlb_equals_pilot_bound_on_relabelled_grid(k64):
    data = ResourceGrid.all_data(k64)
    pil = ResourceGrid.from_state(k64, np.ones((1, 64), dtype=np.int8))
    ch = _flat(data, 5)
    assert crlb_mcrlb(data, ch).variance == pytest.approx(crlb_pilot(pil, ch).variance, rel=1e-12)


def test_mcrlb_slope_is_minus_half(k64):
    g = ResourceGrid.all_data(k64)
    snr = np.arange(-10, 21, 5)
    r = np.array([crlb_mcrlb(g, _flat(g, s)).rmse_m for s in snr])
    slope = np.polyfit(snr / 10, np.log10(r), 1)[0]
    assert slope == pytest.approx(-0.5, abs=1e-9)


def test_mcrlb_without_data_is_unbounded(k64):
    g = ResourceGrid.from_state(k64, np.ones((1, 64), dtype=np.int8))
    with pytest.raises(UnboundedVarianceError):
        crlb_mcrlb(g, _flat(g, 0))


def test_data_crlb_converges_to_mcrlb_at_high_snr(k64, qpsk):
    g = ResourceGrid.all_data(k64)
    ch = _flat(g, 25)
    assert crlb_data_exact(g, ch, qpsk).fisher == pytest.approx(crlb_mcrlb(g, ch).fisher, rel=0.01)


@pytest.mark.parametrize("snr", [0.0, 5.0, 10.0])
def test_data_crlb_not_below_mcrlb(k64, qpsk, snr):
    g = ResourceGrid.all_data(k64)
    ch = _flat(g, snr)
    assert crlb_data_exact(g, ch, qpsk).variance >= crlb_mcrlb(g, ch).variance


@pytest.mark.parametrize("gamma_db", [0.0, 6.0])
def test_data_fisher_matches_monte_carlo_score(qpsk, gamma_db):
    gamma = 10 ** (gamma_db / 10)
    mc, se = mc_phase_score_power(gamma, qpsk.symbols, 1_000_000, np.random.default_rng(4))
    q = data_fisher_factor(gamma, qpsk, GaussHermiteRule(30))
    assert q == pytest.approx(mc, rel=0.02)


def test_data_crlb_quadrature_warning_channel(k64, qpsk):
    g = ResourceGrid.all_data(k64)
    for snr in (0.0, 20.0):
        assert crlb_data_exact(g, _flat(g, snr), qpsk, gh_order=30).warning is None
    # the squared score converges slowly near the threshold; the default order stays within 1e-3
    r30 = crlb_data_exact(g, _flat(g, 10), qpsk, gh_order=30)
    r150 = crlb_data_exact(g, _flat(g, 10), qpsk, gh_order=150)
    assert r30.fisher == pytest.approx(r150.fisher, rel=1e-3)
    with pytest.raises(ValueError):
        crlb_data_exact(g, _flat(g, 10), qpsk, gh_order=4)


def test_data_crlb_for_16qam_is_finite(k64):
    g = ResourceGrid.all_data(k64)
    r = crlb_data_exact(g, _flat(g, 15), Constellation.qam16())
    assert 0 < r.variance < math.inf
