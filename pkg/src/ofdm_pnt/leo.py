"""LEO downlink positioning: Walker geometry, pseudoranges, WNLS fixes and error ellipses."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, StochasticChannelSpec, apply_channel, link_budget_snr_db, realize_channel
from .constants import EARTH_MU, EARTH_RADIUS, EARTH_ROTATION_RATE, SPEED_OF_LIGHT
from .estimators import ESTIMATOR_MODES, EstimatorConfig, GridSearch
from .grid import Constellation, ResourceGrid, ThetaParams, generate_payload
from .montecarlo import ZZB_MODE, ZzbSettings, trial_seed
from .quadrature import GaussHermiteRule
from .zzb import zzb_modes


class GeometryError(ValueError):
    """Satellite geometry leaves the position/clock solution unobservable."""


# ---------------------------------------------------------------- geometry
@dataclass(frozen=True)
class WalkerDelta:
    """Walker-Delta i:T/P/F shell of circular orbits."""

    altitude: float
    inclination_deg: float
    total: int
    planes: int
    phasing: int
    raan0_deg: float = 0.0

    def __post_init__(self):
        if self.total < 1 or self.planes < 1 or self.total % self.planes:
            raise ValueError(f"invalid Walker triple {self.total}/{self.planes}/{self.phasing}: planes must divide total")
        # F and F mod P give the same set of satellites (one in-plane slot shift)
        if self.phasing < 0:
            raise ValueError("phasing must be nonnegative")
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")

    @property
    def per_plane(self) -> int:
        return self.total // self.planes

    @property
    def semi_major_axis(self) -> float:
        return EARTH_RADIUS + self.altitude

    @property
    def period(self) -> float:
        return 2 * math.pi * math.sqrt(self.semi_major_axis**3 / EARTH_MU)

    def positions_ecef(self, t: float) -> np.ndarray:
        """(total, 3) Earth-fixed positions at time ``t`` seconds after epoch."""
        S = self.per_plane
        j = np.repeat(np.arange(self.planes), S)
        s = np.tile(np.arange(S), self.planes)
        raan = math.radians(self.raan0_deg) + 2 * math.pi * j / self.planes
        n = 2 * math.pi / self.period
        u = 2 * math.pi * s / S + 2 * math.pi * self.phasing * j / self.total + n * t
        inc = math.radians(self.inclination_deg)
        a = self.semi_major_axis
        x = a * (np.cos(raan) * np.cos(u) - np.sin(raan) * np.sin(u) * math.cos(inc))
        y = a * (np.sin(raan) * np.cos(u) + np.cos(raan) * np.sin(u) * math.cos(inc))
        z = a * np.sin(u) * math.sin(inc)
        th = EARTH_ROTATION_RATE * t
        c, sn = math.cos(th), math.sin(th)
        return np.stack([c * x + sn * y, -sn * x + c * y, z], axis=1)


def walker_delta(altitude_m: float, inclination_deg: float, total_sats: int, planes: int, phasing: int,
                 epoch: float = 0.0) -> np.ndarray:
    """ECEF positions of every satellite of a Walker-Delta shell at ``epoch`` seconds."""
    return WalkerDelta(altitude_m, inclination_deg, total_sats, planes, phasing).positions_ecef(epoch)


@dataclass(frozen=True)
class Site:
    """Receiver location on a spherical Earth."""

    lat_deg: float = 30.0
    lon_deg: float = -97.0
    alt_m: float = 0.0

    def ecef(self) -> np.ndarray:
        lat, lon = math.radians(self.lat_deg), math.radians(self.lon_deg)
        r = EARTH_RADIUS + self.alt_m
        return r * np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])

    def enu_rotation(self) -> np.ndarray:
        lat, lon = math.radians(self.lat_deg), math.radians(self.lon_deg)
        return np.array([
            [-math.sin(lon), math.cos(lon), 0.0],
            [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)],
            [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)],
        ])

    def to_enu(self, ecef: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(ecef) - self.ecef()) @ self.enu_rotation().T


def elevation_deg(enu: np.ndarray) -> np.ndarray:
    enu = np.atleast_2d(enu)
    return np.degrees(np.arctan2(enu[:, 2], np.hypot(enu[:, 0], enu[:, 1])))


def visible(enu: np.ndarray, mask_deg: float) -> np.ndarray:
    """Indices of satellites at or above the elevation mask."""
    return np.flatnonzero(elevation_deg(enu) >= mask_deg)


def select_satellites(enu: np.ndarray, mask_deg: float, n: int = 4) -> np.ndarray:
    """The ``n`` highest-elevation visible satellites, highest first (ties by index)."""
    idx = visible(enu, mask_deg)
    if idx.size < n:
        raise GeometryError(f"only {idx.size} satellites above {mask_deg} deg, need {n}")
    el = elevation_deg(enu[idx])
    order = np.lexsort((idx, -el))
    return idx[order[:n]]


@dataclass(frozen=True, eq=False)
class SatGeometry:
    sat_positions: np.ndarray  # (n, 3) ENU meters
    receiver: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock_offset: float = 0.0
    mask_deg: float = 30.0

    def __post_init__(self):
        sats = np.asarray(self.sat_positions, dtype=float)
        rx = np.asarray(self.receiver, dtype=float)
        if sats.ndim != 2 or sats.shape[1] != 3:
            raise ValueError("sat_positions must be (n, 3)")
        if np.any(np.linalg.norm(sats - rx, axis=1) <= 0):
            raise GeometryError("satellite coincides with receiver")
        if np.any(elevation_deg(sats - rx) < self.mask_deg - 1e-9):
            raise GeometryError("satellite below the elevation mask")
        object.__setattr__(self, "sat_positions", sats)
        object.__setattr__(self, "receiver", rx)

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.sat_positions - self.receiver, axis=1)

    @property
    def theta_rho(self) -> np.ndarray:
        return np.append(self.receiver, SPEED_OF_LIGHT * self.clock_offset)


def simulate_pseudoranges(geom: SatGeometry, toa_error_s) -> np.ndarray:
    """rho_i = c*range_i/c + c*dt + c*toa_error_i, in meters."""
    err = np.asarray(toa_error_s, dtype=float)
    return geom.ranges + SPEED_OF_LIGHT * geom.clock_offset + SPEED_OF_LIGHT * err


# ---------------------------------------------------------------- solver
def measurement_model(theta: np.ndarray, sats: np.ndarray) -> np.ndarray:
    """h_i = ||r_i - r|| + c*dt for theta = (r, c*dt); broadcasts over leading axes of theta."""
    theta = np.asarray(theta, dtype=float)
    diff = sats - theta[..., None, :3]
    return np.linalg.norm(diff, axis=-1) + theta[..., None, 3]


def jacobian(theta: np.ndarray, sats: np.ndarray) -> np.ndarray:
    """Rows [-u_i, 1] with u_i the unit vector from receiver to satellite i."""
    theta = np.asarray(theta, dtype=float)
    diff = sats - theta[..., None, :3]
    u = diff / np.linalg.norm(diff, axis=-1, keepdims=True)
    ones = np.ones(u.shape[:-1] + (1,))
    return np.concatenate([-u, ones], axis=-1)


def covariance(theta: np.ndarray, sats: np.ndarray, sigma_rho) -> np.ndarray:
    """Q = (A^T Sigma^-1 A)^-1 at ``theta``; sigma_rho holds pseudorange standard deviations."""
    A = jacobian(theta, sats)
    w = 1.0 / np.asarray(sigma_rho, dtype=float) ** 2
    N = A.T @ (w[:, None] * A)
    if np.linalg.cond(N) > 1e14:
        raise GeometryError("normal matrix is singular")
    return np.linalg.inv(N)


@dataclass(frozen=True, eq=False)
class PositionSolution:
    theta_rho_hat: np.ndarray
    Q: np.ndarray
    iterations: int
    converged: bool

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.diag(self.Q))


def _gauss_newton(rho: np.ndarray, sats: np.ndarray, x0: np.ndarray, w: np.ndarray, tol: float, max_iter: int):
    """Batched weighted Gauss-Newton; rho is (n, m), returns (theta, iterations, converged mask)."""
    x = np.broadcast_to(np.asarray(x0, float), (rho.shape[0], 4)).copy()
    done = np.zeros(rho.shape[0], dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        A = jacobian(x, sats)
        r = rho - measurement_model(x, sats)
        Aw = A * w[None, :, None]
        N = np.einsum("nmi,nmj->nij", Aw, A)
        if np.any(np.abs(np.linalg.det(N)) < 1e-300):
            raise GeometryError("normal matrix is singular")
        step = np.linalg.solve(N, np.einsum("nmi,nm->ni", Aw, r)[..., None])[..., 0]
        step[done] = 0.0
        x += step
        done |= np.linalg.norm(step, axis=1) < tol
        if done.all():
            break
    return x, it, done


def wnls_solve(rho, sats: np.ndarray, x0=None, sigma_rho=None, tol: float = 1e-6, max_iter: int = 20) -> PositionSolution:
    """Weighted nonlinear least squares for (ENU position, c*dt) from pseudoranges.

    ``sigma_rho`` are pseudorange standard deviations (default all ones).
    Non-convergence is flagged rather than raised.
    """
    rho = np.asarray(rho, dtype=float)
    sats = np.asarray(sats, dtype=float)
    if rho.shape != (sats.shape[0],) or sats.shape[0] < 4:
        raise ValueError("need one pseudorange per satellite and at least 4 satellites")
    sigma = np.ones(rho.size) if sigma_rho is None else np.asarray(sigma_rho, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("pseudorange standard deviations must be positive")
    x0 = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float)
    x, it, done = _gauss_newton(rho[None, :], sats, x0, 1.0 / sigma**2, tol, max_iter)
    Q = covariance(x[0], sats, sigma)
    return PositionSolution(x[0], Q, it, bool(done[0]))


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_major: float
    semi_minor: float
    orientation: float  # radians, major axis measured from East toward North


def chebyshev_scale(confidence: float = 0.95, dim: int = 2) -> float:
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    return math.sqrt(dim / (1 - confidence))


def chebyshev_ellipse(Q: np.ndarray, confidence: float = 0.95, center=(0.0, 0.0)) -> Ellipse:
    """Distribution-free confidence ellipse from the East/North block of ``Q``."""
    H = np.asarray(Q, dtype=float)[:2, :2]
    H = 0.5 * (H + H.T)
    vals, vecs = np.linalg.eigh(H)
    if vals[0] <= 0:
        raise ValueError("horizontal covariance block is not positive definite")
    k = chebyshev_scale(confidence)
    major = vecs[:, 1]
    ang = math.atan2(major[1], major[0]) % math.pi
    return Ellipse(tuple(float(c) for c in center), k * math.sqrt(vals[1]), k * math.sqrt(vals[0]), ang)


# ---------------------------------------------------------------- campaign
@dataclass(frozen=True)
class LinkBudget:
    carrier_hz: float = 10.7e9
    eirp_dbw_per_4khz: float = -15.0
    rx_gain_db: float = 30.0
    noise_dbm_hz: float = -173.8
    extra_loss_db: float = 0.0


@dataclass(frozen=True, eq=False)
class LeoCampaignSpec:
    grid: ResourceGrid
    constellation: Constellation
    shell: WalkerDelta
    site: Site = field(default_factory=Site)
    epoch: float = 0.0
    mask_deg: float = 30.0
    t_burst: float = 1e-3
    clock_offset: float = 0.0
    link: LinkBudget = field(default_factory=LinkBudget)
    channel: StochasticChannelSpec = field(default_factory=StochasticChannelSpec)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    modes: tuple = ESTIMATOR_MODES
    n_channel: int = 100
    n_noise: int = 200
    seed: int = 0
    zzb: ZzbSettings = field(default_factory=ZzbSettings)
    initial_guess: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_channel < 1 or self.n_noise < 1:
            raise ValueError("trial counts must be >= 1")
        for m in self.modes:
            if m not in ESTIMATOR_MODES:
                raise ValueError(f"unknown estimator mode {m!r}")


def campaign_geometry(spec: LeoCampaignSpec) -> tuple[SatGeometry, np.ndarray]:
    """Four highest satellites at epoch, each placed at its own burst time."""
    enu0 = spec.site.to_enu(spec.shell.positions_ecef(spec.epoch))
    sel = select_satellites(enu0, spec.mask_deg, 4)
    pos = np.empty((4, 3))
    for i, s in enumerate(sel):
        t = spec.epoch + i * spec.t_burst
        pos[i] = spec.site.to_enu(spec.shell.positions_ecef(t)[s])[0]
    geom = SatGeometry(pos, np.zeros(3), spec.clock_offset, spec.mask_deg)
    return geom, sel


def nominal_snr_db(spec: LeoCampaignSpec, geom: SatGeometry) -> np.ndarray:
    df = spec.grid.params.delta_f
    lb = spec.link
    return np.array([
        link_budget_snr_db(r, lb.carrier_hz, df, lb.eirp_dbw_per_4khz, lb.rx_gain_db, lb.noise_dbm_hz, lb.extra_loss_db)
        for r in geom.ranges
    ])


@dataclass(frozen=True, eq=False)
class RealizationResult:
    snr_db: np.ndarray  # (4,) per-satellite LOS SNR
    horiz_emp: np.ndarray  # (modes,)
    vert_emp: np.ndarray
    horiz_zzb: np.ndarray
    vert_zzb: np.ndarray
    cov_emp: np.ndarray  # (modes, 2, 2) horizontal second-moment matrix
    mean_emp: np.ndarray  # (modes, 2)
    cov_zzb: np.ndarray  # (modes, 2, 2) horizontal block of Q from ZZB
    toa_rmse_m: np.ndarray  # (modes, 4) per-satellite ranging RMSE
    toa_zzb_m: np.ndarray  # (modes, 4)
    failures: np.ndarray  # (modes,)


def _realization(spec: LeoCampaignSpec, geom: SatGeometry, base_snr: np.ndarray, r: int) -> RealizationResult:
    grid = spec.grid
    p = grid.params
    n_mode = len(spec.modes)
    search = GridSearch(grid, spec.constellation, spec.estimator)
    rule = GaussHermiteRule(spec.zzb.gh_order)
    snr = np.empty(4)
    toa = np.full((spec.n_noise, n_mode, 4), np.nan)
    zzb_var = np.empty((n_mode, 4))
    for i in range(4):
        crng = np.random.default_rng(trial_seed(spec.seed, 0, r, i))
        offset, taps = spec.channel.draw(crng)
        snr[i] = base_snr[i] + offset
        ch0 = realize_channel(grid, spec.channel, base_snr[i], offset, taps, ThetaParams(0.0, 0.0))
        zm = sorted({ZZB_MODE[m] for m in spec.modes})
        res = zzb_modes(grid, ch0, spec.constellation, zm, spec.zzb.zgrid_step, spec.zzb.phigrid_step, rule)
        for j, m in enumerate(spec.modes):
            zzb_var[j, i] = res[ZZB_MODE[m]].variance
        for t in range(spec.n_noise):
            rng = np.random.default_rng(trial_seed(spec.seed, 1, r, i, t))
            theta = ThetaParams(rng.uniform(0.0, p.N_a), rng.uniform(0.0, 2 * math.pi))
            chan = realize_channel(grid, spec.channel, base_snr[i], offset, taps, theta)
            y = apply_channel(generate_payload(grid, spec.constellation, rng), chan, rng)
            est = search.estimate_modes(y, ChannelModel.from_realization(chan), spec.modes)
            for j, m in enumerate(spec.modes):
                toa[t, j, i] = (est[m].theta_hat.z - theta.z) * p.T_s
    sats = geom.sat_positions
    truth = geom.theta_rho
    x0 = np.asarray(spec.initial_guess, float)
    horiz_emp = np.empty(n_mode)
    vert_emp = np.empty(n_mode)
    horiz_zzb = np.empty(n_mode)
    vert_zzb = np.empty(n_mode)
    cov_emp = np.empty((n_mode, 2, 2))
    mean_emp = np.empty((n_mode, 2))
    cov_zzb = np.empty((n_mode, 2, 2))
    failures = np.zeros(n_mode, dtype=np.int64)
    for j in range(n_mode):
        rho = simulate_pseudoranges(geom, toa[:, j, :])
        x, _, ok = _gauss_newton(rho, sats, x0, np.ones(4), 1e-6, 20)
        failures[j] = int((~ok).sum())
        e = x[ok] - truth
        horiz_emp[j] = math.sqrt(np.mean(e[:, 0] ** 2 + e[:, 1] ** 2))
        vert_emp[j] = math.sqrt(np.mean(e[:, 2] ** 2))
        cov_emp[j] = e[:, :2].T @ e[:, :2] / e.shape[0]
        mean_emp[j] = e[:, :2].mean(axis=0)
        Q = covariance(truth, sats, SPEED_OF_LIGHT * np.sqrt(zzb_var[j]))
        horiz_zzb[j] = math.sqrt(Q[0, 0] + Q[1, 1])
        vert_zzb[j] = math.sqrt(Q[2, 2])
        cov_zzb[j] = Q[:2, :2]
    toa_rmse = SPEED_OF_LIGHT * np.sqrt(np.mean(toa**2, axis=0))
    return RealizationResult(snr, horiz_emp, vert_emp, horiz_zzb, vert_zzb, cov_emp, mean_emp, cov_zzb,
                             toa_rmse, SPEED_OF_LIGHT * np.sqrt(zzb_var), failures)


def _realization_star(args):
    return _realization(*args)


@dataclass(frozen=True, eq=False)
class LeoResult:
    modes: tuple
    geometry: SatGeometry
    sat_ids: np.ndarray
    nominal_snr_db: np.ndarray
    realizations: list

    def stack(self, name: str) -> np.ndarray:
        return np.stack([getattr(r, name) for r in self.realizations])

    def ellipses(self, confidence: float = 0.95) -> dict:
        """Per mode: Chebyshev ellipses from pooled empirical and ZZB horizontal covariances."""
        out = {}
        ce, cz, mu = self.stack("cov_emp"), self.stack("cov_zzb"), self.stack("mean_emp")
        for j, m in enumerate(self.modes):
            center = mu[:, j].mean(axis=0)
            # second moment about the origin minus the pooled mean gives the pooled covariance
            cov = ce[:, j].mean(axis=0) - np.outer(center, center)
            out[m] = {
                "empirical": chebyshev_ellipse(cov, confidence, center),
                "zzb": chebyshev_ellipse(cz[:, j].mean(axis=0), confidence),
            }
        return out


def leo_campaign(spec: LeoCampaignSpec, workers: int = 1) -> LeoResult:
    """Per channel realization: TOA trials per satellite and mode, WNLS fixes, ZZB through Q."""
    geom, sel = campaign_geometry(spec)
    base = nominal_snr_db(spec, geom)
    jobs = [(spec, geom, base, r) for r in range(spec.n_channel)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reals = list(ex.map(_realization_star, jobs, chunksize=1))
    else:
        reals = [_realization(*j) for j in jobs]
    return LeoResult(tuple(spec.modes), geom, sel, base, reals)
