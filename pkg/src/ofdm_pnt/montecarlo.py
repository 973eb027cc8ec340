"""Monte Carlo sweeps over SNR and channel realizations, paired with the bounds."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import bound_rows
from .channel import ChannelModel, StochasticChannelSpec, realize_channel
from .constants import SPEED_OF_LIGHT
from .estimators import ESTIMATOR_MODES, EstimatorConfig, GridSearch
from .grid import Constellation, ResourceGrid, ThetaParams, generate_payload, mode_mask
from .channel import apply_channel
from .quadrature import GaussHermiteRule
from .zzb import DEFAULT_PHISTEP, DEFAULT_ZSTEP, zzb_modes

# bound used for each estimator mode
ZZB_MODE = {"pilot-only": "pilot-only", "data-only": "data-only", "pilot+data": "pilot+data", "dd": "pilot+data"}


@dataclass(frozen=True)
class ZzbSettings:
    zgrid_step: float = DEFAULT_ZSTEP
    phigrid_step: float = DEFAULT_PHISTEP
    gh_order: int = 20
    crlb_gh_order: int = 30


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    grid: ResourceGrid
    constellation: Constellation
    snr_db: tuple
    modes: tuple = ESTIMATOR_MODES
    channel: StochasticChannelSpec = field(default_factory=StochasticChannelSpec)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    n_channel: int = 1
    n_noise: int = 100
    seed: int = 0
    zzb: ZzbSettings = field(default_factory=ZzbSettings)
    compute_bounds: bool = True

    def __post_init__(self):
        if self.n_channel < 1 or self.n_noise < 1:
            raise ValueError("trial counts must be >= 1")
        if len(self.snr_db) == 0:
            raise ValueError("empty SNR sweep")
        for m in self.modes:
            if m not in ESTIMATOR_MODES:
                raise ValueError(f"unknown estimator mode {m!r}")
            if m == "dd":
                if self.grid.n_pilot == 0:
                    raise ValueError("mode 'dd' needs pilot cells")
            elif not np.any(mode_mask(self.grid, m)):
                raise ValueError(f"mode {m!r} has no occupied cells on this grid")


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Errors are stored as (snr, realization, trial, mode) arrays in meters."""

    snr_db: np.ndarray
    modes: tuple
    errors_m: np.ndarray
    failures: np.ndarray
    zzb_m: np.ndarray  # (snr, realization, mode), NaN when bounds were skipped
    crlb: list  # per snr: dict of CRLB-type RMSEs (first realization)

    def rmse_m(self, axis=(1, 2)) -> np.ndarray:
        return np.sqrt(np.nanmean(self.errors_m**2, axis=axis))

    def rows(self) -> list[dict]:
        out = []
        n_real = self.errors_m.shape[1]
        for i, snr in enumerate(self.snr_db):
            for j, mode in enumerate(self.modes):
                e = self.errors_m[i, :, :, j].ravel()
                e = e[np.isfinite(e)]
                rmse, se = rmse_with_se(e)
                row = {
                    "snr_db": float(snr),
                    "mode": mode,
                    "rmse_m": rmse,
                    "rmse_se_m": se,
                    "mean_bias_m": float(np.mean(e)) if e.size else math.nan,
                    "trials": int(e.size),
                    "failures": int(self.failures[i, :, j].sum()),
                    # ZZB averaged in variance over realizations
                    "zzb_m": float(np.sqrt(np.mean(self.zzb_m[i, :, j] ** 2))) if n_real else math.nan,
                }
                row.update(self.crlb[i])
                out.append(row)
        return out

    def per_realization_rmse(self) -> np.ndarray:
        """(snr, realization, mode) RMSE over noise trials."""
        return np.sqrt(np.nanmean(self.errors_m**2, axis=2))


def rmse_with_se(errors) -> tuple[float, float]:
    """RMSE and its delta-method standard error SE(MSE) / (2 RMSE)."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        return math.nan, math.nan
    sq = e * e
    mse = float(np.mean(sq))
    rmse = math.sqrt(mse)
    if e.size < 2 or rmse == 0:
        return rmse, 0.0
    se_mse = float(np.std(sq, ddof=1)) / math.sqrt(e.size)
    return rmse, se_mse / (2 * rmse)


def trial_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Independent stream per (snr index, realization, trial), fixed by position only."""
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def _draw_realization(spec: ExperimentSpec, i_snr: int, r: int):
    rng = np.random.default_rng(trial_seed(spec.seed, 0, i_snr, r))
    return spec.channel.draw(rng)


def _run_block(spec: ExperimentSpec, i_snr: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """All noise trials of one (SNR, realization) pair."""
    grid = spec.grid
    p = grid.params
    snr = float(spec.snr_db[i_snr])
    offset, taps = _draw_realization(spec, i_snr, r)
    search = GridSearch(grid, spec.constellation, spec.estimator)
    err = np.full((spec.n_noise, len(spec.modes)), np.nan)
    fail = np.zeros(len(spec.modes), dtype=np.int64)
    m_per_s = p.T_s * SPEED_OF_LIGHT
    for t in range(spec.n_noise):
        rng = np.random.default_rng(trial_seed(spec.seed, 1, i_snr, r, t))
        theta = ThetaParams(rng.uniform(0.0, p.N_a), rng.uniform(0.0, 2 * math.pi))
        chan = realize_channel(grid, spec.channel, snr, offset, taps, theta)
        x = generate_payload(grid, spec.constellation, rng)
        y = apply_channel(x, chan, rng)
        model = ChannelModel.from_realization(chan)
        try:
            est = search.estimate_modes(y, model, spec.modes)
        except (FloatingPointError, np.linalg.LinAlgError):
            fail += 1
            continue
        for j, mode in enumerate(spec.modes):
            err[t, j] = (est[mode].theta_hat.z - theta.z) * m_per_s
    return err, fail


def _run_block_star(args):
    return _run_block(*args)


def _bounds_block(spec: ExperimentSpec, i_snr: int, r: int) -> np.ndarray:
    grid = spec.grid
    snr = float(spec.snr_db[i_snr])
    offset, taps = _draw_realization(spec, i_snr, r)
    chan = realize_channel(grid, spec.channel, snr, offset, taps, ThetaParams(0.0, 0.0))
    rule = GaussHermiteRule(spec.zzb.gh_order)
    needed = sorted({ZZB_MODE[m] for m in spec.modes})
    res = zzb_modes(grid, chan, spec.constellation, needed, spec.zzb.zgrid_step, spec.zzb.phigrid_step, rule)
    return np.array([res[ZZB_MODE[m]].rmse_m for m in spec.modes])


def _bounds_block_star(args):
    return _bounds_block(*args)


def _crlb_block(spec: ExperimentSpec, i_snr: int) -> dict:
    offset, taps = _draw_realization(spec, i_snr, 0)
    chan = realize_channel(spec.grid, spec.channel, float(spec.snr_db[i_snr]), offset, taps, ThetaParams(0.0, 0.0))
    return bound_rows(spec.grid, chan, spec.constellation, spec.zzb.crlb_gh_order)


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> SweepResult:
    """Run every (SNR, realization, trial) and pair the results with bounds.

    Each trial draws its truth, payload and noise from a seed fixed by its
    position in the sweep, so results do not depend on ``workers``.
    """
    n_snr = len(spec.snr_db)
    jobs = [(spec, i, r) for i in range(n_snr) for r in range(spec.n_channel)]
    bjobs = jobs if spec.compute_bounds else []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            blocks = list(ex.map(_run_block_star, jobs, chunksize=1))
            bvals = list(ex.map(_bounds_block_star, bjobs, chunksize=1))
    else:
        blocks = [_run_block(*j) for j in jobs]
        bvals = [_bounds_block(*j) for j in bjobs]
    n_mode = len(spec.modes)
    errors = np.empty((n_snr, spec.n_channel, spec.n_noise, n_mode))
    failures = np.zeros((n_snr, spec.n_channel, n_mode), dtype=np.int64)
    for (_, i, r), (err, fail) in zip(jobs, blocks):
        errors[i, r] = err
        failures[i, r] = fail
    zzb = np.full((n_snr, spec.n_channel, n_mode), np.nan)
    for (_, i, r), v in zip(bjobs, bvals):
        zzb[i, r] = v
    crlb = [_crlb_block(spec, i) if spec.compute_bounds else {} for i in range(n_snr)]
    return SweepResult(np.asarray(spec.snr_db, float), tuple(spec.modes), errors, failures, zzb, crlb)


def ccdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CCDF as (sorted distinct values, fraction strictly greater).

    The step function P(X > x) is right-continuous: at each returned value it
    already takes the lower level.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("ccdf of an empty sample")
    xs = np.unique(v)
    above = v.size - np.searchsorted(np.sort(v), xs, side="right")
    return xs, above / v.size


def ccdf_at(values, x: float) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("ccdf of an empty sample")
    return float(np.mean(v > x))


def percentile(values, q: float) -> float:
    """q-th percentile (0..100) by linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("percentile of an empty sample")
    return float(np.percentile(v, q))
