"""Grid-search ML estimators of (z, phi): pilot-only, data-only, pilot+data and decision-directed.

The objective for a cell is its log-likelihood with theta-independent terms
dropped.  With ``w = conj(y) / sigma`` and ``a = sqrt(g) * weight / sigma``:

* pilot cell: ``2 Re{w a x nu}``
* data cell:  ``logsumexp_c(2 a Re{w c nu} - a^2 |c|^2)``

The pilot sum collapses per subcarrier into one complex number, so its surface
is a matrix product.  The data surface goes through compiled loops and, for
constellations with rotational symmetry, is evaluated over one phase period
and tiled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .channel import ChannelModel
from .grid import Constellation, ResourceGrid, ThetaParams, mode_mask

ESTIMATOR_MODES = ("pilot-only", "data-only", "pilot+data", "dd")


@dataclass(frozen=True)
class EstimatorConfig:
    delta_z: float = 1.0 / 8
    delta_phi: float = math.radians(15.0)
    mode: str = "pilot+data"

    def __post_init__(self):
        if self.mode not in ESTIMATOR_MODES:
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if not self.delta_z > 0:
            raise ValueError("delta_z must be positive")
        if not 0 < self.delta_phi <= 2 * math.pi:
            raise ValueError("delta_phi must be in (0, 2*pi]")


@dataclass(frozen=True, eq=False)
class Estimate:
    theta_hat: ThetaParams
    loglik_at_peak: float
    decoded_symbols: np.ndarray | None = None


def loglik_cell(y: complex, cell, grid: ResourceGrid, chan_model: ChannelModel,
                constellation: Constellation, theta: ThetaParams) -> float:
    """Log-likelihood of one occupied cell up to a theta-independent constant."""
    m, k = cell
    if not grid.occupied_mask[m, k]:
        raise ValueError(f"cell {cell} is empty")
    K = grid.params.K
    d = k if k < K // 2 else k - K
    nu = np.exp(-2j * math.pi * theta.z * d / K + 1j * theta.phi)
    mu = math.sqrt(chan_model.g) * grid.weights[m, k]
    s2 = chan_model.sigma2
    if grid.pilot_mask[m, k]:
        return float(2.0 / s2 * np.real(np.conj(y) * mu * grid.pilots[m, k] * nu))
    c = constellation.symbols
    terms = (2.0 * np.real(np.conj(y) * mu * c * nu) - mu**2 * np.abs(c) ** 2) / s2
    return float(logsumexp(terms))


def _parabolic_offset(fm: float, f0: float, fp: float) -> float:
    den = fm - 2.0 * f0 + fp
    if not den < 0:
        return 0.0
    return 0.5 * (fm - fp) / den


class GridSearch:
    """Precomputed (z, phi) grid and delay ramps for one grid/config pair."""

    def __init__(self, grid: ResourceGrid, constellation: Constellation, cfg: EstimatorConfig):
        p = grid.params
        if cfg.delta_z > p.N_a:
            raise ValueError("delta_z exceeds the a-priori window")
        self.grid = grid
        self.constellation = constellation
        self.cfg = cfg
        n = int(math.floor(p.N_a / cfg.delta_z + 1e-9))
        self.z = np.arange(n + 1) * cfg.delta_z
        n_phi = max(1, int(round(2 * math.pi / cfg.delta_phi)))
        self.phi = np.arange(n_phi) * (2 * math.pi / n_phi)
        d = p.d()
        self.ramp = np.exp(-2j * math.pi * self.z[:, None] * d[None, :] / p.K)
        # the data surface repeats every 2*pi/R in phi; evaluate one period when the grid allows
        r = constellation.rotation_order
        self.n_phi_eval = n_phi // r if n_phi % r == 0 else n_phi
        self.rot = np.exp(1j * self.phi[: self.n_phi_eval])
        self._data_idx = np.nonzero(grid.data_mask)

    # surfaces ------------------------------------------------------------
    def pilot_surface(self, y: np.ndarray, chan_model: ChannelModel, grid: ResourceGrid | None = None):
        grid = grid or self.grid
        a = math.sqrt(chan_model.g) * grid.weights / chan_model.sigma2
        b = np.sum(np.where(grid.pilot_mask, np.conj(y) * a * grid.pilots, 0), axis=0)
        pz = self.ramp @ b
        return 2.0 * np.real(pz[:, None] * np.exp(1j * self.phi)[None, :])

    def data_surface(self, y: np.ndarray, chan_model: ChannelModel) -> np.ndarray:
        ms, ks = self._data_idx
        sig = math.sqrt(chan_model.sigma2)
        w = np.ascontiguousarray(np.conj(y[ms, ks]) / sig)
        amp = math.sqrt(chan_model.g) * self.grid.weights[ms, ks] / sig
        ez = np.ascontiguousarray(self.ramp[:, ks])
        c = self.constellation
        if c.separable:
            s = c.pam_scale
            lv = np.asarray(c.pam_levels, float)
            if lv.size == 2 and lv[0] == -lv[1] == -1.0:
                part = _kernels.data_surface_binary(w, 2.0 * amp * s, (amp * s) ** 2, ez, self.rot,
                                                    _kernels.SOFTPLUS_TABLE)
            else:
                part = _kernels.data_surface_separable(w, 2.0 * amp * s, (amp * s) ** 2, ez, self.rot, lv)
        else:
            part = _kernels.data_surface_generic(w, np.ascontiguousarray(amp), ez, self.rot, c.symbols)
        reps = self.phi.size // self.n_phi_eval
        return np.tile(part, (1, reps))

    def surface(self, y, chan_model, mode: str) -> np.ndarray:
        if not np.any(mode_mask(self.grid, mode)):
            raise ValueError(f"no occupied cells for mode {mode!r}")
        out = np.zeros((self.z.size, self.phi.size))
        if mode in ("pilot-only", "pilot+data") and self.grid.n_pilot:
            out += self.pilot_surface(y, chan_model)
        if mode in ("data-only", "pilot+data") and self.grid.n_data:
            out += self.data_surface(y, chan_model)
        return out

    # peak picking --------------------------------------------------------
    def peak(self, surf: np.ndarray) -> tuple[ThetaParams, float]:
        """Discrete argmax (first in z-major order) plus parabolic refinement in z."""
        flat = int(np.argmax(surf))
        iz, ip = divmod(flat, surf.shape[1])
        z = self.z[iz]
        if 0 < iz < self.z.size - 1:
            off = _parabolic_offset(surf[iz - 1, ip], surf[iz, ip], surf[iz + 1, ip])
            z += float(np.clip(off, -0.5, 0.5)) * self.cfg.delta_z
        return ThetaParams(z, self.phi[ip]), float(surf[iz, ip])

    # estimators ----------------------------------------------------------
    def ml(self, y, chan_model, mode: str) -> Estimate:
        th, val = self.peak(self.surface(y, chan_model, mode))
        return Estimate(th, val)

    def dd(self, y, chan_model, pilot_est: Estimate | None = None) -> Estimate:
        if self.grid.n_pilot == 0:
            raise ValueError("decision-directed estimation needs at least one pilot cell")
        pilot_est = pilot_est or self.ml(y, chan_model, "pilot-only")
        decoded = decode_symbols(y, self.grid, chan_model, self.constellation, pilot_est.theta_hat)
        known = self.grid.with_known_data(decoded)
        th, val = self.peak(self.pilot_surface(y, chan_model, known))
        return Estimate(th, val, decoded)

    def estimate_modes(self, y, chan_model, modes) -> dict:
        """Estimates for several modes, sharing the pilot and data surfaces."""
        need_p = any(m in ("pilot-only", "pilot+data", "dd") for m in modes) and self.grid.n_pilot > 0
        need_d = any(m in ("data-only", "pilot+data") for m in modes) and self.grid.n_data > 0
        sp = self.pilot_surface(y, chan_model) if need_p else None
        sd = self.data_surface(y, chan_model) if need_d else None
        out = {}
        for mode in modes:
            if mode == "dd":
                continue
            parts = {"pilot-only": (sp,), "data-only": (sd,), "pilot+data": (sp, sd)}[mode]
            parts = [s for s in parts if s is not None]
            if not parts:
                raise ValueError(f"no occupied cells for mode {mode!r}")
            th, val = self.peak(sum(parts))
            out[mode] = Estimate(th, val)
        if "dd" in modes:
            pe = out.get("pilot-only")
            if pe is None:
                th, val = self.peak(sp)
                pe = Estimate(th, val)
            out["dd"] = self.dd(y, chan_model, pe)
        return out


def decode_symbols(y, grid: ResourceGrid, chan_model: ChannelModel, constellation: Constellation,
                   theta: ThetaParams) -> np.ndarray:
    """Hard decisions on data cells: nearest symbol to y / (mu * nu(theta)). Zero elsewhere."""
    p = grid.params
    nu = np.exp(-2j * math.pi * theta.z * p.d() / p.K + 1j * theta.phi)
    mu = math.sqrt(chan_model.g) * grid.weights
    safe = np.where(mu > 0, mu, 1.0)
    eq = y / (safe * nu[None, :])
    idx = constellation.nearest(eq)
    return np.where(grid.data_mask, constellation.symbols[idx], 0)


def ml_estimate(y, grid: ResourceGrid, chan_model: ChannelModel, constellation: Constellation,
                cfg: EstimatorConfig, search: GridSearch | None = None) -> Estimate:
    """Grid-search ML estimate over the cells of ``cfg.mode``."""
    if cfg.mode == "dd":
        return dd_estimate(y, grid, chan_model, constellation, cfg, search)
    search = search or GridSearch(grid, constellation, cfg)
    return search.ml(y, chan_model, cfg.mode)


def dd_estimate(y, grid: ResourceGrid, chan_model: ChannelModel, constellation: Constellation,
                cfg: EstimatorConfig, search: GridSearch | None = None) -> Estimate:
    """Pilot-only estimate, hard-decode the data, then search again with decodes as pilots."""
    search = search or GridSearch(grid, constellation, cfg)
    return search.dd(y, chan_model)
