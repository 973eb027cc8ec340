"""Ziv-Zakai bound on TOA error variance for grids mixing pilots and unknown data.

The bound is built from the minimum error probability of the binary test
between delay/phase ``(0, 0)`` and ``(z1, phi1)``.  The log-likelihood ratio
is a sum of independent per-cell terms; each term's first two moments are
computed (closed form for pilots, Gauss-Hermite for data cells) and the sum is
treated as Gaussian, so ``Pmin = Q(mean / sqrt(var))``.  The bound is then

    T_s^2 / N_a * integral_0^N_a z1 * V{(N_a - z1) * max_phi1 Pmin(z1, phi1)} dz1

with ``V`` the valley-filling operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .channel import ChannelRealization
from .constants import SPEED_OF_LIGHT
from .grid import Constellation, ResourceGrid, ThetaParams, mode_mask
from .mixture import data_llr_moments
from .quadrature import GaussHermiteRule

DEFAULT_ZSTEP = 1.0 / 16
DEFAULT_PHISTEP = math.radians(15.0)
DEFAULT_GH_ORDER = 20


@dataclass(frozen=True)
class LlrMoments:
    mean: float
    var: float


@dataclass(frozen=True, eq=False)
class ZzbResult:
    variance: float
    z: np.ndarray
    pmin_profile: np.ndarray
    mode: str
    zgrid_step: float
    phigrid_step: float
    gh_order: int
    n_refine: int = 0

    @property
    def rmse_s(self) -> float:
        return math.sqrt(self.variance)

    @property
    def rmse_m(self) -> float:
        return SPEED_OF_LIGHT * math.sqrt(self.variance)


def _check_cell(grid: ResourceGrid, cell, kind: int):
    m, k = cell
    if grid.state[m, k] != kind:
        raise ValueError(f"cell {cell} has state {grid.state[m, k]}, expected {kind}")


def _beta(theta1: ThetaParams, k, K: int, d=None):
    # phase of nu_k(theta1); nu_k(theta0) = 1
    if d is None:
        d = np.where(np.asarray(k) < K // 2, k, np.asarray(k) - K)
    return -2 * math.pi * theta1.z * d / K + theta1.phi


def _one_minus_cos(beta):
    return 2.0 * np.sin(0.5 * beta) ** 2


def llr_moments_pilot(grid: ResourceGrid, chan: ChannelRealization, cell, theta1: ThetaParams) -> LlrMoments:
    """Moments of the LLR of one pilot cell: mean 2*gamma*|x|^2*(1 - Re nu), var = 2*mean."""
    from .grid import PILOT

    _check_cell(grid, cell, PILOT)
    m, k = cell
    e = chan.gamma[m, k] * (grid.weights[m, k] * abs(grid.pilots[m, k])) ** 2
    mean = 2.0 * e * float(_one_minus_cos(_beta(theta1, k, grid.params.K)))
    return LlrMoments(mean, 2.0 * mean)


def llr_moments_data(
    grid: ResourceGrid,
    chan: ChannelRealization,
    constellation: Constellation,
    cell,
    theta1: ThetaParams,
    rule: GaussHermiteRule | None = None,
) -> LlrMoments:
    """Moments of the LLR of one data cell by Gauss-Hermite quadrature."""
    from .grid import DATA

    _check_cell(grid, cell, DATA)
    rule = rule or GaussHermiteRule(DEFAULT_GH_ORDER)
    m, k = cell
    gam = chan.gamma[m, k] * grid.weights[m, k] ** 2
    mean, var = data_llr_moments(gam, _beta(theta1, k, grid.params.K), constellation, rule)
    return LlrMoments(float(mean[0]), float(var[0]))


def q_ratio(mean, var):
    """Q(mean / sqrt(var)), defined as 0.5 where var == 0."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    safe = np.where(var > 0, var, 1.0)
    return np.where(var > 0, ndtr(-mean / np.sqrt(safe)), 0.5)


def pmin(
    grid: ResourceGrid,
    chan: ChannelRealization,
    constellation: Constellation,
    theta1: ThetaParams,
    rule: GaussHermiteRule | None = None,
    mode: str = "pilot+data",
) -> float:
    """Gaussian-approximated minimum error probability for one hypothesis pair.

    Exact per-cell moments are summed over the cells of ``mode``.
    """
    rule = rule or GaussHermiteRule(DEFAULT_GH_ORDER)
    keep = mode_mask(grid, mode)
    if not np.any(keep):
        raise ValueError(f"no occupied cells for mode {mode!r}")
    K = grid.params.K
    d = grid.params.d()
    beta = _beta(theta1, None, K, d)
    occ = _one_minus_cos(beta)
    gam = chan.gamma * grid.weights**2
    pil = keep & grid.pilot_mask
    mean = 2.0 * np.sum((gam * np.abs(grid.pilots) ** 2 * occ[None, :])[pil])
    var = 2.0 * mean
    dat = keep & grid.data_mask
    if np.any(dat):
        ms, ks = np.nonzero(dat)
        g = gam[ms, ks]
        for gk in np.unique(g):
            sel = g == gk
            mm, vv = data_llr_moments(gk, beta[ks[sel]], constellation, rule)
            mean += mm.sum()
            var += vv.sum()
    return float(q_ratio(mean, var))


def valley_fill(samples) -> np.ndarray:
    """Replace each sample by the max of itself and every later sample."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("valley_fill needs at least one sample")
    return np.maximum.accumulate(x[::-1])[::-1]


class MomentTable:
    """Tabulated data-cell LLR moments as functions of (gamma, beta).

    The moments are periodic in beta with the constellation's rotational
    period P and vanish at multiples of it.  They are stored divided by
    sin^2(pi*beta/P), which removes the quadratic zero and leaves a smooth
    ratio that interpolates well.  Each gamma gets its own exactly computed
    beta table; gammas that do not repeat are interpolated on a dB lattice.
    """

    def __init__(self, constellation: Constellation, rule: GaussHermiteRule, n_beta: int = 1024,
                 db_step: float = 0.25, exact_limit: int = 16):
        self.constellation = constellation
        self.rule = rule
        self.period = 2 * math.pi / constellation.rotation_order
        self.fold = constellation.conj_symmetric
        span = self.period / 2 if self.fold else self.period
        h = span / n_beta
        self.nodes = (np.arange(n_beta) + 0.5) * h
        self.db_step = db_step
        self.exact_limit = exact_limit
        self._tables: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def _reduce(self, beta):
        x = np.mod(beta, self.period)
        if self.fold:
            x = np.minimum(x, self.period - x)
        return x

    def _den(self, x):
        return np.sin(math.pi * x / self.period) ** 2

    def _table(self, gamma: float):
        tab = self._tables.get(gamma)
        if tab is None:
            m, v = data_llr_moments(gamma, self.nodes, self.constellation, self.rule)
            den = self._den(self.nodes)
            tab = (m / den, v / den)
            self._tables[gamma] = tab
        return tab

    def _eval(self, gamma: float, x):
        rm, rv = self._table(gamma)
        den = self._den(x)
        return np.interp(x, self.nodes, rm) * den, np.interp(x, self.nodes, rv) * den

    def __call__(self, gamma, beta):
        """Mean and variance arrays shaped like ``beta``; ``gamma`` broadcasts."""
        x = self._reduce(np.asarray(beta, dtype=float))
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), x.shape)
        ug = np.unique(gamma)
        mean = np.empty(x.shape)
        var = np.empty(x.shape)
        if ug.size <= self.exact_limit:
            for g in ug:
                sel = gamma == g
                mean[sel], var[sel] = self._eval(float(g), x[sel])
            return mean, var
        # log-ratio interpolation between neighbouring lattice gammas
        db = 10 * np.log10(gamma)
        lo = np.floor(db / self.db_step).astype(int)
        frac = db / self.db_step - lo
        for i in np.unique(lo):
            sel = lo == i
            g0 = 10 ** (i * self.db_step / 10)
            g1 = 10 ** ((i + 1) * self.db_step / 10)
            m0, v0 = self._eval(g0, x[sel])
            m1, v1 = self._eval(g1, x[sel])
            f = frac[sel]
            mean[sel] = _log_lerp(m0, m1, f)
            var[sel] = _log_lerp(v0, v1, f)
        return mean, var


def _log_lerp(a, b, f):
    tiny = 1e-300
    a = np.maximum(a, tiny)
    b = np.maximum(b, tiny)
    return np.exp((1 - f) * np.log(a) + f * np.log(b))


_TABLE_CACHE: dict = {}


def moment_table(constellation: Constellation, rule: GaussHermiteRule) -> MomentTable:
    key = (constellation.symbols.tobytes(), rule.order)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = MomentTable(constellation, rule)
        _TABLE_CACHE[key] = tab
    return tab


def z_grid(N_a: float, step: float, mainlobe_scale: float | None = None, ratio: float = 1.04) -> np.ndarray:
    """Uniform grid on [0, N_a] merged with a geometric grid resolving the main lobe.

    ``mainlobe_scale`` is the width (in samples) of the Pmin main lobe.  When
    it is finer than ``step`` the uniform grid alone would step over the whole
    lobe, so geometric points from scale/16 up to one sample are added.
    """
    n = max(int(math.ceil(N_a / step - 1e-9)), 1)
    z = np.linspace(0.0, N_a, n + 1)
    if mainlobe_scale is not None and mainlobe_scale < 4 * step:
        lo = mainlobe_scale / 16
        hi = min(1.0, N_a)
        if lo < hi:
            geo = np.exp(np.arange(math.log(lo), math.log(hi), math.log(ratio)))
            z = np.unique(np.concatenate([z, geo]))
    return z


@dataclass
class _Aggregate:
    """Cells of one mode collapsed by subcarrier (and SNR for data cells)."""

    pilot_d: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pilot_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    data_d: np.ndarray = field(default_factory=lambda: np.zeros(0))
    data_gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    data_count: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _aggregate(grid: ResourceGrid, chan: ChannelRealization, mode: str) -> _Aggregate:
    keep = mode_mask(grid, mode)
    if not np.any(keep):
        raise ValueError(f"degenerate grid: no occupied cells for mode {mode!r}")
    K = grid.params.K
    d = grid.params.d()
    gam = chan.gamma * grid.weights**2
    agg = _Aggregate()
    pil = keep & grid.pilot_mask
    if np.any(pil):
        e = np.where(pil, gam * np.abs(grid.pilots) ** 2, 0.0).sum(axis=0)
        ks = np.flatnonzero(e > 0)
        agg.pilot_d = d[ks].astype(float)
        agg.pilot_energy = e[ks]
    dat = keep & grid.data_mask
    if np.any(dat):
        ms, ks = np.nonzero(dat)
        g = gam[ms, ks]
        pairs = np.stack([ks.astype(float), g], axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        agg.data_d = d[uniq[:, 0].astype(int)].astype(float)
        agg.data_gamma = uniq[:, 1]
        agg.data_count = counts.astype(float)
    return agg


def _moment_sums(agg: _Aggregate, z: np.ndarray, phi: np.ndarray, K: int, table, period: int = 1) -> tuple:
    """Summed LLR mean/variance on the (z, phi) grid.

    Data moments repeat in phi with the constellation's rotational period;
    when ``period`` divides the phi grid only the first 1/period of it is
    evaluated for data cells and the result is tiled.
    """
    mean = np.zeros((z.size, phi.size))
    var = np.zeros((z.size, phi.size))
    w = -2 * math.pi / K
    if agg.pilot_d.size:
        beta = w * z[:, None, None] * agg.pilot_d[None, None, :] + phi[None, :, None]
        pm = 2.0 * _one_minus_cos(beta) @ agg.pilot_energy
        mean += pm
        var += 2.0 * pm
    if agg.data_d.size:
        reps = period if phi.size % period == 0 else 1
        ph = phi[: phi.size // reps]
        dm = np.empty((z.size, ph.size))
        dv = np.empty((z.size, ph.size))
        # chunk over z to bound memory
        step = max(1, int(2_000_000 // max(1, ph.size * agg.data_d.size)))
        for i in range(0, z.size, step):
            zz = z[i:i + step]
            beta = w * zz[:, None, None] * agg.data_d[None, None, :] + ph[None, :, None]
            m, v = table(agg.data_gamma[None, None, :], beta)
            dm[i:i + step] = m @ agg.data_count
            dv[i:i + step] = v @ agg.data_count
        mean += np.tile(dm, (1, reps))
        var += np.tile(dv, (1, reps))
    return mean, var


def _mainlobe_scale(agg: _Aggregate, K: int) -> float | None:
    # 1/sqrt of the known-symbol Fisher information in z units
    w2 = (2 * math.pi / K) ** 2
    info = 2 * w2 * (np.sum(agg.pilot_energy * agg.pilot_d**2)
                     + np.sum(agg.data_count * agg.data_gamma * agg.data_d**2))
    return 1.0 / math.sqrt(info) if info > 0 else None


def phi_grid(step: float) -> np.ndarray:
    n = max(1, int(round(2 * math.pi / step)))
    return np.arange(n) * (2 * math.pi / n)


def max_phi_pmin(grid, chan, constellation, mode, z, phigrid_step=DEFAULT_PHISTEP, rule=None, table=None):
    """max over the phase grid of Pmin(z1, phi1) for each z1 in ``z``."""
    rule = rule or GaussHermiteRule(DEFAULT_GH_ORDER)
    table = table or moment_table(constellation, rule)
    agg = _aggregate(grid, chan, mode)
    mean, var = _moment_sums(agg, np.asarray(z, float), phi_grid(phigrid_step), grid.params.K, table,
                             constellation.rotation_order)
    return q_ratio(mean, var).max(axis=1)


def _integrate(p, z, prof) -> float:
    filled = valley_fill((p.N_a - z) * prof)
    return p.T_s**2 / p.N_a * float(np.trapezoid(z * filled, z))


def zzb_variance(
    grid: ResourceGrid,
    chan: ChannelRealization,
    constellation: Constellation,
    mode: str = "pilot+data",
    zgrid_step: float = DEFAULT_ZSTEP,
    phigrid_step: float = DEFAULT_PHISTEP,
    rule: GaussHermiteRule | None = None,
    refine: bool = True,
    table: MomentTable | None = None,
) -> ZzbResult:
    """Ziv-Zakai bound on the TOA error variance (seconds squared).

    Parameters
    ----------
    mode
        ``"pilot-only"``, ``"data-only"`` or ``"pilot+data"``.
    zgrid_step, phigrid_step
        Grid spacing for z1 (samples) and phi1 (radians).  Pmin is maximized
        over the phase grid by direct scan.
    refine
        Add geometric z1 points inside the main lobe when it is narrower than
        the uniform step.  Without them the trapezoid misses the high-SNR
        main lobe entirely.
    table
        Data-moment interpolator; built (and cached) from ``constellation``
        and ``rule`` when omitted.
    """
    return zzb_modes(grid, chan, constellation, (mode,), zgrid_step, phigrid_step, rule, refine, table)[mode]


def zzb_modes(
    grid: ResourceGrid,
    chan: ChannelRealization,
    constellation: Constellation,
    modes=("pilot-only", "data-only", "pilot+data"),
    zgrid_step: float = DEFAULT_ZSTEP,
    phigrid_step: float = DEFAULT_PHISTEP,
    rule: GaussHermiteRule | None = None,
    refine: bool = True,
    table: MomentTable | None = None,
) -> dict:
    """ZZB for several modes on one shared z grid; pilot and data sums are computed once.

    The shared grid is refined for the narrowest main lobe among ``modes``.
    """
    if not zgrid_step > 0 or not phigrid_step > 0:
        raise ValueError("grid steps must be positive")
    modes = tuple(modes)
    rule = rule or GaussHermiteRule(DEFAULT_GH_ORDER)
    table = table or moment_table(constellation, rule)
    p = grid.params
    aggs = {m: _aggregate(grid, chan, m) for m in modes}
    scale = None
    if refine:
        scales = [s for s in (_mainlobe_scale(a, p.K) for a in aggs.values()) if s is not None]
        scale = min(scales) if scales else None
    z = z_grid(p.N_a, zgrid_step, scale)
    phi = phi_grid(phigrid_step)
    R = constellation.rotation_order
    parts = {}
    for part in ("pilot-only", "data-only"):
        if any(m in (part, "pilot+data") for m in modes):
            try:
                parts[part] = _moment_sums(_aggregate(grid, chan, part), z, phi, p.K, table, R)
            except ValueError:
                parts[part] = (np.zeros((z.size, phi.size)),) * 2
    n_uniform = max(int(math.ceil(p.N_a / zgrid_step - 1e-9)), 1) + 1
    out = {}
    for m in modes:
        if m == "pilot+data":
            mean = parts["pilot-only"][0] + parts["data-only"][0]
            var = parts["pilot-only"][1] + parts["data-only"][1]
        else:
            mean, var = parts[m]
        prof = q_ratio(mean, var).max(axis=1)
        out[m] = ZzbResult(
            variance=_integrate(p, z, prof),
            z=z,
            pmin_profile=prof,
            mode=m,
            zgrid_step=zgrid_step,
            phigrid_step=phigrid_step,
            gh_order=rule.order,
            n_refine=int(z.size - n_uniform),
        )
    return out
