"""Cramer-Rao type bounds on TOA error variance.

All three bounds share the form 1 / (sum over cells of d[k]^2 times a per-cell
information factor), differing in which cells contribute and in the factor:

* pilot CRLB: pilots, factor 8 pi^2 delta_f^2 gamma
* MCRLB: data cells treated as if their symbols were known
* data CRLB: data cells with the true Gaussian-mixture likelihood, whose
  Fisher information is integrated numerically
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .constants import SPEED_OF_LIGHT
from .grid import Constellation, ResourceGrid
from .mixture import data_fisher_factor
from .quadrature import GaussHermiteRule


class UnboundedVarianceError(ValueError):
    """No contributing cell carries delay information (zero Fisher information)."""


@dataclass(frozen=True)
class CrlbResult:
    variance: float
    fisher: float
    kind: str
    warning: str | None = None

    @property
    def rmse_m(self) -> float:
        return SPEED_OF_LIGHT * math.sqrt(self.variance)


def _cell_energy(grid: ResourceGrid, chan: ChannelRealization) -> np.ndarray:
    if chan.alpha.shape != grid.state.shape:
        raise ValueError("channel and grid shapes differ")
    return chan.gamma * grid.weights**2


def _finish(fisher: float, kind: str, warning=None) -> CrlbResult:
    if not fisher > 0:
        raise UnboundedVarianceError(f"{kind}: zero Fisher information, variance unbounded")
    return CrlbResult(1.0 / fisher, fisher, kind, warning)


def crlb_pilot(grid: ResourceGrid, chan: ChannelRealization) -> CrlbResult:
    """Pilot-only CRLB, 1 / (8 pi^2 delta_f^2 sum_pilots d^2 gamma |x|^2)."""
    p = grid.params
    d2 = p.d().astype(float) ** 2
    e = _cell_energy(grid, chan) * np.abs(grid.pilots) ** 2
    info = np.sum((d2[None, :] * e)[grid.pilot_mask])
    return _finish(8 * math.pi**2 * p.delta_f**2 * info, "pilot")


def crlb_mcrlb(grid: ResourceGrid, chan: ChannelRealization) -> CrlbResult:
    """Modified CRLB: data cells counted as known unit-power symbols."""
    p = grid.params
    d2 = p.d().astype(float) ** 2
    e = _cell_energy(grid, chan)
    info = np.sum((d2[None, :] * e)[grid.data_mask])
    return _finish(8 * math.pi**2 * p.delta_f**2 * info, "mcrlb")


def crlb_data_exact(
    grid: ResourceGrid,
    chan: ChannelRealization,
    constellation: Constellation,
    gh_order: int = 30,
    rtol: float = 1e-3,
) -> CrlbResult:
    """CRLB for data cells under the mixture likelihood.

    Per-cell Fisher information is E[score^2], evaluated by a uniform average
    over transmitted symbols and a 2-D Gauss-Hermite rule over the noise.  The
    rule is re-run at a higher order; a relative change above ``rtol`` is
    reported through ``warning``.
    """
    if gh_order < 10:
        raise ValueError("gh_order must be >= 10")
    p = grid.params
    d = p.d()
    e = _cell_energy(grid, chan)
    mask = grid.data_mask & (d[None, :] != 0)
    if not np.any(mask):
        raise UnboundedVarianceError("data-exact: no data cell off DC")
    d2 = np.broadcast_to(d.astype(float) ** 2, e.shape)[mask]
    gam = e[mask]
    keys, inv = np.unique(np.round(gam, 12), return_inverse=True)
    rule = GaussHermiteRule(gh_order)
    check = GaussHermiteRule(gh_order + 10)
    factors = np.array([data_fisher_factor(g, constellation, rule) for g in keys])
    ref = np.array([data_fisher_factor(g, constellation, check) for g in keys])
    info_z = np.sum(d2 * factors[inv.ravel()])
    info_ref = np.sum(d2 * ref[inv.ravel()])
    warning = None
    if info_ref > 0 and abs(info_z - info_ref) > rtol * info_ref:
        warning = (
            f"Gauss-Hermite order {gh_order} differs from order {gh_order + 10} "
            f"by {abs(info_z - info_ref) / info_ref:.2e} relative"
        )
    # score per cell carries a factor 2*pi*d/K in z units; T_s converts z to seconds
    fisher = (2 * math.pi / p.K) ** 2 * info_z / p.T_s**2
    return _finish(fisher, "data-exact", warning)


def bound_rows(grid, chan, constellation, gh_order: int = 30) -> dict:
    """All three CRLB-type RMSEs in meters; unbounded entries map to None."""
    out = {}
    for key, fn in (
        ("crlb_pilot_m", lambda: crlb_pilot(grid, chan)),
        ("mcrlb_m", lambda: crlb_mcrlb(grid, chan)),
        ("crlb_data_m", lambda: crlb_data_exact(grid, chan, constellation, gh_order)),
    ):
        try:
            out[key] = fn().rmse_m
        except UnboundedVarianceError:
            out[key] = None
    return out
