"""Per-resource complex channel gains and the AWGN observation model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ResourceGrid, ThetaParams
from .constants import SPEED_OF_LIGHT


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Complex gain ``alpha[m, k]`` (delay and phase included) plus noise power."""

    alpha: np.ndarray
    sigma2: float
    truth: ThetaParams
    gain_profile: dict = field(default_factory=lambda: {"mode": "flat"})

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        alpha = np.asarray(self.alpha, dtype=complex)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def gamma(self) -> np.ndarray:
        """Per-resource SNR |alpha|^2 / sigma2 (unit-power symbols)."""
        return np.abs(self.alpha) ** 2 / self.sigma2

    @property
    def mean_gain(self) -> float:
        return float(np.mean(np.abs(self.alpha) ** 2))


@dataclass(frozen=True)
class ChannelModel:
    """What the receiver assumes: flat gain ``g`` and noise power ``sigma2``."""

    g: float
    sigma2: float

    @classmethod
    def from_realization(cls, chan: ChannelRealization) -> "ChannelModel":
        return cls(chan.mean_gain, chan.sigma2)


def _ramp(grid: ResourceGrid, theta: ThetaParams) -> np.ndarray:
    p = grid.params
    d = p.d()
    return np.exp(-2j * np.pi * d * theta.z / p.K + 1j * theta.phi)[None, :].repeat(p.n_sym, 0)


def make_flat_channel(grid: ResourceGrid, g: float, theta: ThetaParams, sigma2: float) -> ChannelRealization:
    """alpha = sqrt(g) * exp(-j 2 pi d[k] delta_f tau + j phi) on every cell."""
    if not g > 0:
        raise ValueError(f"g must be positive, got {g}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    alpha = math.sqrt(g) * _ramp(grid, theta)
    return ChannelRealization(alpha, float(sigma2), theta, {"mode": "flat", "g": float(g)})


def tap_response(grid: ResourceGrid, taps, per_symbol_drift: float = 0.0) -> np.ndarray:
    """h[m, k] = sum over taps of amp * exp(-j 2 pi d[k] delta_f delay) * exp(j drift m)."""
    p = grid.params
    if len(taps) == 0:
        raise ValueError("tap list is empty")
    d = p.d()
    h = np.zeros(p.K, dtype=complex)
    for delay, amp in taps:
        h = h + complex(amp) * np.exp(-2j * np.pi * d * p.delta_f * float(delay))
    drift = np.exp(1j * per_symbol_drift * np.arange(p.n_sym))
    return drift[:, None] * h[None, :]


def make_tapped_channel(
    grid: ResourceGrid, taps, theta: ThetaParams, sigma2: float, per_symbol_drift: float = 0.0
) -> ChannelRealization:
    """Frequency-selective stand-in channel; the first tap is the LOS at zero excess delay."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    h = tap_response(grid, taps, per_symbol_drift)
    alpha = h * _ramp(grid, theta)
    profile = {
        "mode": "tapped",
        "taps": [[float(dl), complex(a).real, complex(a).imag] for dl, a in taps],
        "drift": float(per_symbol_drift),
    }
    return ChannelRealization(alpha, float(sigma2), theta, profile)


def apply_channel(payload: np.ndarray, chan: ChannelRealization, noise_seed) -> np.ndarray:
    """y = alpha * x + v with v ~ CN(0, sigma2) drawn independently per cell."""
    payload = np.asarray(payload)
    if payload.shape != chan.alpha.shape:
        raise ValueError(f"payload shape {payload.shape} does not match channel {chan.alpha.shape}")
    rng = np.random.default_rng(noise_seed)
    s = math.sqrt(chan.sigma2 / 2)
    v = s * (rng.standard_normal(payload.shape) + 1j * rng.standard_normal(payload.shape))
    return chan.alpha * payload + v


def link_budget_snr_db(
    slant_range_m: float,
    carrier_hz: float,
    delta_f: float,
    eirp_dbw_per_4khz: float = -15.0,
    rx_gain_db: float = 30.0,
    noise_dbm_hz: float = -173.8,
    extra_loss_db: float = 0.0,
) -> float:
    """Per-resource SNR in dB from free-space path loss and a per-4-kHz EIRP density.

    Defaults follow the Ku-band downlink numbers used in the LEO examples; the
    result is a helper for building configs, not part of any bound.
    """
    eirp_sc = eirp_dbw_per_4khz + 10 * math.log10(delta_f / 4e3)
    fspl = 20 * math.log10(4 * math.pi * slant_range_m * carrier_hz / SPEED_OF_LIGHT)
    noise_dbw = noise_dbm_hz - 30 + 10 * math.log10(delta_f)
    return eirp_sc + rx_gain_db - fspl - extra_loss_db - noise_dbw


@dataclass(frozen=True)
class StochasticChannelSpec:
    """Distribution of substitute fading channels, one draw per realization.

    ``flat`` draws only a log-normal gain offset.  ``tapped`` adds between
    ``n_taps[0]`` and ``n_taps[1]`` weak echoes with uniform delays up to
    ``max_excess_delay`` seconds, random phases and exponentially distributed
    power around ``tap_power_db`` relative to the LOS tap.
    """

    mode: str = "flat"
    gain_jitter_db: float = 0.0
    n_taps: tuple[int, int] = (2, 4)
    tap_power_db: float = -20.0
    max_excess_delay: float = 50e-9
    per_symbol_drift: float = 0.0

    def __post_init__(self):
        if self.mode not in ("flat", "tapped"):
            raise ValueError(f"channel mode must be flat or tapped, got {self.mode!r}")
        if self.gain_jitter_db < 0:
            raise ValueError("gain_jitter_db must be nonnegative")
        lo, hi = self.n_taps
        if lo < 0 or hi < lo:
            raise ValueError("n_taps must be an ordered pair of nonnegative counts")

    def draw(self, rng: np.random.Generator) -> tuple[float, list]:
        """(gain offset in dB, tap list) for one realization; tap list starts with the LOS."""
        offset = float(rng.normal(0.0, self.gain_jitter_db)) if self.gain_jitter_db > 0 else 0.0
        taps = [(0.0, 1.0 + 0j)]
        if self.mode == "tapped":
            n = int(rng.integers(self.n_taps[0], self.n_taps[1] + 1))
            for _ in range(n):
                delay = float(rng.uniform(0.0, self.max_excess_delay))
                power = 10 ** (self.tap_power_db / 10) * float(rng.exponential(1.0))
                taps.append((delay, math.sqrt(power) * complex(np.exp(2j * math.pi * rng.uniform()))))
        return offset, taps


def realize_channel(grid: ResourceGrid, spec: StochasticChannelSpec, snr_db: float, gain_offset_db: float,
                    taps, theta: ThetaParams) -> ChannelRealization:
    """Channel with the LOS tap at ``snr_db + gain_offset_db`` per resource and unit noise power."""
    amp = 10 ** ((snr_db + gain_offset_db) / 20)
    scaled = [(dl, amp * a) for dl, a in taps]
    if spec.mode == "flat" and len(taps) == 1:
        return make_flat_channel(grid, amp**2, theta, 1.0)
    return make_tapped_channel(grid, scaled, theta, 1.0, spec.per_symbol_drift)
