import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofdm_pnt.channel import make_flat_channel, make_tapped_channel
from ofdm_pnt.grid import Constellation, OfdmParams, ResourceGrid, ThetaParams
from ofdm_pnt.quadrature import GaussHermiteRule
from ofdm_pnt.zzb import (
    MomentTable, llr_moments_data, llr_moments_pilot, pmin, valley_fill, z_grid, zzb_modes, zzb_variance,
)

from conftest import FIG2_PILOTS
from oracles import brute_force_zzb_pilot, pilot_pmin_closed_form

RULE = GaussHermiteRule(20)
K64 = OfdmParams(64, 1, 15e3, 6.25e-6)
FIG2 = ResourceGrid.from_pilot_subcarriers(K64, FIG2_PILOTS)
PILOT_ONLY = ResourceGrid.from_state(K64, np.isin(np.arange(64), FIG2_PILOTS).astype(np.int8)[None, :])
QPSK = Constellation.qpsk()


def _flat(grid, snr_db):
    return make_flat_channel(grid, 10 ** (snr_db / 10), ThetaParams(0, 0), 1.0)


# ---------------------------------------------------------------- per-cell moments
def test_pilot_moments_examples():
    ch = _flat(FIG2, 3)
    g = 10 ** 0.3
    m0 = llr_moments_pilot(FIG2, ch, (0, 3), ThetaParams(0, 0))
    assert m0.mean == 0 and m0.var == 0
    m1 = llr_moments_pilot(FIG2, ch, (0, 3), ThetaParams(0, math.pi))
    assert m1.mean == pytest.approx(4 * g)


@given(st.floats(0, 6), st.floats(0, 2 * math.pi), st.sampled_from(FIG2_PILOTS))
def test_pilot_variance_is_twice_mean(z, phi, k):
    m = llr_moments_pilot(FIG2, _flat(FIG2, 0), (0, k), ThetaParams(z, phi))
    if m.mean > 0:
        assert m.var == pytest.approx(2 * m.mean, rel=1e-12)


def test_pilot_moments_reject_data_cell():
    with pytest.raises(ValueError):
        llr_moments_pilot(FIG2, _flat(FIG2, 0), (0, 4), ThetaParams(1, 0))


def test_data_moments_vanish_at_identical_hypotheses():
    m = llr_moments_data(FIG2, _flat(FIG2, 5), QPSK, (0, 5), ThetaParams(0, 0), RULE)
    assert abs(m.mean) < 1e-9 and abs(m.var) < 1e-9


def test_data_mean_nonnegative_on_sweep():
    ch = _flat(FIG2, 0)
    for z in np.linspace(0, 6, 13):
        for phi in np.linspace(0, 2 * math.pi, 12, endpoint=False):
            m = llr_moments_data(FIG2, ch, QPSK, (0, 20), ThetaParams(z, phi), RULE)
            assert m.mean >= -1e-9


def test_single_symbol_data_cell_matches_pilot():
    one = Constellation(np.array([FIG2.pilots[0, 3]]), "pilot")
    grid_d = ResourceGrid.from_state(K64, np.full((1, 64), 2, dtype=np.int8))
    ch = _flat(FIG2, 2)
    th = ThetaParams(0.7, 1.1)
    p = llr_moments_pilot(FIG2, ch, (0, 3), th)
    d = llr_moments_data(grid_d, ch, one, (0, 3), th, RULE)
    assert d.mean == pytest.approx(p.mean, abs=1e-8)
    assert d.var == pytest.approx(p.var, abs=1e-8)


# ---------------------------------------------------------------- Pmin
def test_pmin_half_at_identical_hypotheses():
    assert pmin(FIG2, _flat(FIG2, 5), QPSK, ThetaParams(0, 0), RULE) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 6), st.floats(0, 2 * math.pi), st.floats(-10, 20))
def test_pilot_pmin_closed_form(z, phi, snr):
    ch = _flat(PILOT_ONLY, snr)
    got = pmin(PILOT_ONLY, ch, QPSK, ThetaParams(z, phi), RULE, "pilot-only")
    d = K64.d()[FIG2_PILOTS]
    want = pilot_pmin_closed_form(np.full(8, 10 ** (snr / 10)), d, 64, z, ThetaParams(z, phi).phi)
    assert got == pytest.approx(want, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 6), st.floats(0, 2 * math.pi), st.floats(-5, 15))
def test_combined_pmin_not_above_parts(z, phi, snr):
    ch = _flat(FIG2, snr)
    th = ThetaParams(z, phi)
    pd = pmin(FIG2, ch, QPSK, th, RULE, "pilot+data")
    p = pmin(FIG2, ch, QPSK, th, RULE, "pilot-only")
    d = pmin(FIG2, ch, QPSK, th, RULE, "data-only")
    assert pd <= max(p, d) + 1e-12
    assert 0 <= pd <= 0.5 + 1e-6


# ---------------------------------------------------------------- valley fill
def test_valley_fill_examples():
    assert np.array_equal(valley_fill(np.array([1.0, 0, 2, 0])), [2, 2, 2, 0])
    x = np.array([5.0, 4, 4, 1])
    assert np.array_equal(valley_fill(x), x)
    with pytest.raises(ValueError):
        valley_fill(np.array([]))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_valley_fill_properties(xs):
    x = np.array(xs)
    v = valley_fill(x)
    assert np.all(np.diff(v) <= 0)
    assert np.all(v >= x)
    assert np.array_equal(valley_fill(v), v)


# ---------------------------------------------------------------- ZZB
def test_low_snr_asymptote_is_prior_std():
    g = ResourceGrid.all_data(K64)
    r = zzb_variance(g, _flat(g, -20), QPSK)
    assert r.rmse_s == pytest.approx(K64.t_a / math.sqrt(12), rel=0.05)


def test_variance_never_exceeds_prior_and_pmin_bounded():
    for snr in (-30, 0, 20):
        r = zzb_variance(FIG2, _flat(FIG2, snr), QPSK)
        assert r.variance <= K64.t_a**2 / 12 * (1 + 1e-6)
        assert np.all(r.pmin_profile >= 0) and np.all(r.pmin_profile <= 0.5 + 1e-6)


def test_zzb_monotone_in_snr():
    v = [zzb_variance(FIG2, _flat(FIG2, s), QPSK).variance for s in range(-10, 21, 2)]
    assert np.all(np.diff(v) <= 1e-18)


def test_all_data_threshold_between_5_and_10_db():
    from ofdm_pnt.bounds import crlb_data_exact
    g = ResourceGrid.all_data(K64)
    ratio = {}
    for s in (0, 5, 10, 15):
        ch = _flat(g, s)
        ratio[s] = zzb_variance(g, ch, QPSK).rmse_m / crlb_data_exact(g, ch, QPSK).rmse_m
    assert ratio[0] > 3 and ratio[5] > 1.5
    assert ratio[10] < 1.1 and ratio[15] < 1.1


def test_combined_zzb_lowest_on_fig2_grid():
    for s in range(-10, 16, 5):
        res = zzb_modes(FIG2, _flat(FIG2, s), QPSK)
        pd = res["pilot+data"].variance
        assert pd <= res["pilot-only"].variance * (1 + 1e-9)
        assert pd <= res["data-only"].variance * (1 + 1e-9)


def test_zzb_modes_agree_with_single_mode_calls():
    ch = _flat(FIG2, 5)
    res = zzb_modes(FIG2, ch, QPSK)
    for m in ("pilot-only", "data-only", "pilot+data"):
        single = zzb_variance(FIG2, ch, QPSK, m)
        assert single.variance == pytest.approx(res[m].variance, rel=1e-12)


def test_zstep_refinement_converges_at_0db():
    ch = _flat(FIG2, 0)
    a = zzb_variance(FIG2, ch, QPSK, zgrid_step=1 / 8).rmse_m
    b = zzb_variance(FIG2, ch, QPSK, zgrid_step=1 / 16).rmse_m
    assert abs(a - b) / b < 0.01


def test_phase_grid_refinement_converges():
    ch = _flat(FIG2, 5)
    a = zzb_variance(FIG2, ch, QPSK, phigrid_step=math.radians(15)).rmse_m
    b = zzb_variance(FIG2, ch, QPSK, phigrid_step=math.radians(3)).rmse_m
    assert abs(a - b) / b < 0.01


@pytest.mark.parametrize("snr", [0.0, 10.0])
def test_pilot_zzb_matches_brute_force(snr):
    got = zzb_variance(PILOT_ONLY, _flat(PILOT_ONLY, snr), QPSK, "pilot-only").variance
    want = brute_force_zzb_pilot(64, 15e3, 6.25e-6, FIG2_PILOTS, 10 ** (snr / 10))
    assert math.sqrt(got) == pytest.approx(math.sqrt(want), rel=0.01)


def test_moment_table_lattice_matches_exact_path():
    # a tapped channel has many distinct per-cell SNRs; compare interpolated and exact tables
    g = ResourceGrid.all_data(K64)
    ch = make_tapped_channel(g, [(0.0, 3.0), (2e-7, 0.9j)], ThetaParams(0, 0), 1.0)
    exact = MomentTable(QPSK, RULE, exact_limit=10_000)
    lattice = MomentTable(QPSK, RULE, exact_limit=0)
    a = zzb_variance(g, ch, QPSK, table=exact).rmse_m
    b = zzb_variance(g, ch, QPSK, table=lattice).rmse_m
    assert b == pytest.approx(a, rel=5e-3)


def test_table_matches_direct_moments():
    table = MomentTable(QPSK, RULE)
    from ofdm_pnt.mixture import data_llr_moments
    beta = np.linspace(-3, 3, 41)
    for gamma in (0.5, 4.0):
        m_ref, v_ref = data_llr_moments(gamma, beta, QPSK, RULE)
        m, v = table(np.full(beta.size, gamma), beta)
        assert np.allclose(m, m_ref, rtol=2e-3, atol=1e-6)
        assert np.allclose(v, v_ref, rtol=2e-3, atol=1e-6)


def test_z_grid_contains_uniform_points():
    z = z_grid(6.0, 1 / 16, 0.01)
    assert z[0] == 0 and z[-1] == 6.0
    assert np.all(np.diff(z) > 0)
    assert np.all(np.isin(np.linspace(0, 6, 97), z))


def test_degenerate_mode_raises():
    g = ResourceGrid.all_data(K64)
    with pytest.raises(ValueError):
        zzb_variance(g, _flat(g, 0), QPSK, "pilot-only")
