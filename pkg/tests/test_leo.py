import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofdm_pnt.alloc import BlockLayout, layout_to_grid
from ofdm_pnt.constants import SPEED_OF_LIGHT
from ofdm_pnt.estimators import EstimatorConfig
from ofdm_pnt.grid import Constellation, OfdmParams
from ofdm_pnt.leo import (
    GeometryError, LeoCampaignSpec, LinkBudget, SatGeometry, Site, WalkerDelta, campaign_geometry,
    chebyshev_ellipse, covariance, elevation_deg, jacobian, leo_campaign, measurement_model,
    select_satellites, simulate_pseudoranges, visible, wnls_solve,
)
from ofdm_pnt.montecarlo import ZzbSettings

from oracles import kepler_period

SHELL = WalkerDelta(550e3, 53.0, 1584, 22, 39)
SITE = Site()


@pytest.fixture(scope="module")
def geom():
    enu = SITE.to_enu(SHELL.positions_ecef(0.0))
    sel = select_satellites(enu, 30.0)
    return SatGeometry(enu[sel], np.zeros(3), 2e-6)


def test_shell_counts_and_period():
    assert SHELL.per_plane == 72
    assert SHELL.period == pytest.approx(5736, abs=10)
    assert SHELL.period == pytest.approx(kepler_period(550e3), rel=1e-3)
    with pytest.raises(ValueError):
        WalkerDelta(550e3, 53, 1584, 25, 1)


def test_orbit_radius_constant():
    p = SHELL.positions_ecef(123.0)
    assert np.allclose(np.linalg.norm(p, axis=1), SHELL.semi_major_axis)


def test_visibility_and_selection():
    enu = SITE.to_enu(SHELL.positions_ecef(0.0))
    vis = visible(enu, 30.0)
    assert vis.size >= 4
    assert np.all(elevation_deg(enu[vis]) >= 30.0)
    sel = select_satellites(enu, 30.0)
    el = elevation_deg(enu[sel])
    assert np.all(np.diff(el) <= 0)
    assert el[-1] >= np.sort(elevation_deg(enu[vis]))[-4]
    with pytest.raises(GeometryError):
        select_satellites(enu, 89.9)


def test_geometry_rejects_low_satellite():
    with pytest.raises(GeometryError):
        SatGeometry(np.array([[1e6, 0, 1e3]] * 4))


def test_pseudorange_examples(geom):
    z = np.zeros(4)
    base = simulate_pseudoranges(replace(geom, clock_offset=0.0), z)
    assert np.allclose(base, geom.ranges)
    shifted = simulate_pseudoranges(replace(geom, clock_offset=1e-6), z)
    assert np.allclose(shifted - base, 299.792458)
    e = np.array([1e-9, 0, 0, 0])
    d = simulate_pseudoranges(replace(geom, clock_offset=0.0), e) - base
    assert d[0] == pytest.approx(0.299792458) and np.allclose(d[1:], 0)


def test_zero_noise_recovery(geom):
    rho = simulate_pseudoranges(geom, np.zeros(4))
    x0 = geom.theta_rho + np.array([7e3, -7e3, 1e3, 0])
    sol = wnls_solve(rho, geom.sat_positions, x0)
    assert sol.converged and sol.iterations <= 8
    assert np.max(np.abs(sol.theta_rho_hat - geom.theta_rho)) < 1e-3


def test_jacobian_against_finite_differences(geom):
    th = np.array([12.0, -40.0, 3.0, 500.0])
    J = jacobian(th, geom.sat_positions)
    h = 1e-3
    fd = np.empty_like(J)
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd[:, i] = (measurement_model(th + e, geom.sat_positions) - measurement_model(th - e, geom.sat_positions)) / (2 * h)
    assert np.max(np.abs(J - fd)) / np.max(np.abs(J)) < 1e-6
    assert np.allclose(np.linalg.norm(J[:, :3], axis=1), 1.0)


def test_monte_carlo_covariance_matches_q(geom):
    sig = np.array([0.5, 1.0, 1.5, 0.8])
    Q = covariance(geom.theta_rho, geom.sat_positions, sig)
    rng = np.random.default_rng(0)
    rho0 = simulate_pseudoranges(geom, np.zeros(4))
    est = np.array([
        wnls_solve(rho0 + sig * rng.standard_normal(4), geom.sat_positions, geom.theta_rho, sig).theta_rho_hat
        for _ in range(10_000)
    ])
    C = np.cov(est.T)
    assert np.linalg.norm(C - Q) / np.linalg.norm(Q) < 0.10


def test_q_symmetric_psd_and_shrinks(geom):
    sig = np.ones(4)
    Q = covariance(geom.theta_rho, geom.sat_positions, sig)
    assert np.allclose(Q, Q.T)
    assert np.all(np.linalg.eigvalsh(Q) > 0)
    for i in range(4):
        s2 = sig.copy()
        s2[i] = 0.5
        assert np.trace(covariance(geom.theta_rho, geom.sat_positions, s2)) < np.trace(Q)


def test_degenerate_geometry_raises():
    sats = np.array([[0, 0, 1e6]] * 4, float)
    with pytest.raises(GeometryError):
        covariance(np.zeros(4), sats, np.ones(4))


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e4, 1e4))
def test_common_offset_goes_to_clock(geom, c):
    rho = simulate_pseudoranges(geom, np.zeros(4))
    a = wnls_solve(rho, geom.sat_positions, geom.theta_rho).theta_rho_hat
    b = wnls_solve(rho + c, geom.sat_positions, geom.theta_rho).theta_rho_hat
    assert np.allclose(b[:3], a[:3], atol=1e-6)
    assert b[3] - a[3] == pytest.approx(c, abs=1e-6)


def test_chebyshev_ellipse_examples():
    e = chebyshev_ellipse(np.eye(2))
    assert e.semi_major == pytest.approx(6.3246, abs=1e-3) and e.semi_minor == pytest.approx(e.semi_major)
    e = chebyshev_ellipse(np.diag([1.0, 4.0]))
    assert e.semi_major == pytest.approx(12.649, abs=1e-3)
    assert e.semi_minor == pytest.approx(6.3246, abs=1e-3)
    assert e.orientation == pytest.approx(math.pi / 2)
    ang = 0.4
    R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    e = chebyshev_ellipse(R @ np.diag([9.0, 1.0]) @ R.T)
    assert e.orientation == pytest.approx(ang)
    with pytest.raises(ValueError):
        chebyshev_ellipse(np.diag([1.0, 0.0]))


def _small_spec(**kw):
    p = OfdmParams(240, 4, 240e3, 156.25e-9)
    grid = layout_to_grid(BlockLayout(20, 12, 4, (14, 19), 4), p)
    base = dict(grid=grid, constellation=Constellation.qpsk(), shell=SHELL, n_channel=3, n_noise=30, seed=3)
    base.update(kw)
    return LeoCampaignSpec(**base)


def test_noiseless_campaign_below_interpolation_floor():
    spec = _small_spec(link=LinkBudget(eirp_dbw_per_4khz=200.0), n_channel=1, n_noise=5)
    res = leo_campaign(spec)
    p = spec.grid.params
    cfg = EstimatorConfig()
    floor = cfg.delta_z / 8 * p.T_s * SPEED_OF_LIGHT
    data_modes = [j for j, m in enumerate(spec.modes) if m != "pilot-only"]
    assert np.all(res.stack("horiz_emp")[:, data_modes] < floor)
    assert np.all(res.stack("vert_emp")[:, data_modes] < floor)
    # z-only refinement: with pilots off the band centre, half a phase step maps to a delay offset
    d_bar = abs(p.d()[np.nonzero(spec.grid.pilot_mask)[1]].mean())
    coupling = (cfg.delta_phi / 2) / (2 * math.pi * d_bar / p.K) * p.T_s * SPEED_OF_LIGHT
    j = spec.modes.index("pilot-only")
    assert np.all(res.stack("toa_rmse_m")[:, j] <= coupling + floor)


def test_campaign_geometry_and_bound_validity():
    spec = _small_spec()
    geom, sel = campaign_geometry(spec)
    assert len(set(sel.tolist())) == 4
    res = leo_campaign(spec)
    emp, zb = res.stack("horiz_emp"), res.stack("horiz_zzb")
    # RMSE over n trials has relative standard error about 1/sqrt(2n) for Gaussian-like errors
    se = emp / math.sqrt(2 * spec.n_noise)
    assert np.all(zb <= emp + 2 * se)
    ell = res.ellipses()
    assert set(ell) == set(spec.modes)


def test_campaign_independent_of_workers():
    spec = _small_spec(n_channel=2, n_noise=5)
    a, b = leo_campaign(spec, 1), leo_campaign(spec, 8)
    for name in ("horiz_emp", "vert_emp", "horiz_zzb", "cov_emp"):
        assert np.array_equal(a.stack(name), b.stack(name))
