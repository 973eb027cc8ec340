"""OFDM resource grid, symbol constellations and payload generation.

Cells of a grid are addressed ``(m, k)`` with ``m`` the OFDM symbol index and
``k`` the subcarrier index, both zero based.  Subcarrier ``k`` sits at the
signed frequency offset ``d[k]`` (in subcarriers) returned by
:func:`freq_index_map`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EMPTY = 0
PILOT = 1
DATA = 2

_STATE_CODES = {"E": EMPTY, "P": PILOT, "D": DATA}


@dataclass(frozen=True)
class OfdmParams:
    """Numerology of one OFDM burst.

    ``t_a`` is the width of the a-priori TOA window in seconds.
    """

    K: int
    n_sym: int
    delta_f: float
    t_a: float

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be an even integer >= 2, got {self.K}")
        if self.n_sym < 1:
            raise ValueError(f"n_sym must be >= 1, got {self.n_sym}")
        if not self.delta_f > 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")
        if not self.t_a > 0:
            raise ValueError(f"t_a must be positive, got {self.t_a}")

    @property
    def T_s(self) -> float:
        """Sampling period 1/(K*delta_f) in seconds."""
        return 1.0 / (self.K * self.delta_f)

    @property
    def N_a(self) -> float:
        """A-priori window in samples."""
        return self.t_a * self.K * self.delta_f

    def d(self) -> np.ndarray:
        """Signed frequency offsets of all subcarriers."""
        return freq_index_map(np.arange(self.K), self.K)


def freq_index_map(k, K: int):
    """Map subcarrier index to signed offset: ``k`` below K/2, ``k - K`` above.

    Works on scalars and integer arrays.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr >= K):
        raise IndexError(f"subcarrier index out of range [0, {K})")
    out = np.where(k_arr < K // 2, k_arr, k_arr - K)
    if np.ndim(k) == 0:
        return int(out)
    return out


@dataclass(frozen=True, eq=False)
class Constellation:
    """Finite symbol alphabet with a uniform prior and unit average power."""

    symbols: np.ndarray
    name: str = "custom"
    pam_levels: np.ndarray | None = field(default=None, init=False)
    pam_scale: float = field(default=1.0, init=False)

    def __post_init__(self):
        syms = np.asarray(self.symbols, dtype=complex).ravel()
        if syms.size == 0:
            raise ValueError("constellation must be nonempty")
        power = float(np.mean(np.abs(syms) ** 2))
        if abs(power - 1.0) > 1e-12:
            raise ValueError(f"constellation average power is {power}, expected 1")
        syms.setflags(write=False)
        object.__setattr__(self, "symbols", syms)
        levels, scale = _separable_levels(syms)
        object.__setattr__(self, "pam_levels", levels)
        object.__setattr__(self, "pam_scale", scale)

    def __len__(self):
        return self.symbols.size

    @property
    def separable(self) -> bool:
        """True if the alphabet is a square product of one real PAM set."""
        return self.pam_levels is not None

    @property
    def rotation_order(self) -> int:
        """Largest r in (8, 4, 2, 1) such that rotating by 2*pi/r maps the set to itself."""
        for r in (8, 4, 2):
            if _same_set(self.symbols * np.exp(2j * np.pi / r), self.symbols):
                return r
        return 1

    @property
    def conj_symmetric(self) -> bool:
        return _same_set(np.conj(self.symbols), self.symbols)

    def nearest(self, z: np.ndarray) -> np.ndarray:
        """Index of the closest symbol to each entry of ``z``."""
        z = np.asarray(z)
        return np.argmin(np.abs(z[..., None] - self.symbols) ** 2, axis=-1)

    @classmethod
    def qpsk(cls) -> "Constellation":
        s = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)
        return cls(s, "qpsk")

    @classmethod
    def qam16(cls) -> "Constellation":
        lv = np.array([-3.0, -1.0, 1.0, 3.0])
        s = (lv[:, None] + 1j * lv[None, :]).ravel() / math.sqrt(10)
        return cls(s, "16qam")

    @classmethod
    def from_name(cls, name: str) -> "Constellation":
        key = name.lower().replace("-", "")
        if key == "qpsk":
            return cls.qpsk()
        if key in ("16qam", "qam16"):
            return cls.qam16()
        raise ValueError(f"unknown constellation {name!r}")


def _same_set(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    if a.size != b.size:
        return False
    dist = np.abs(a[:, None] - b[None, :])
    return bool(np.all(dist.min(axis=1) < tol))


def _separable_levels(syms: np.ndarray):
    # Square alphabets {s*(a + jb) : a, b in L} let the log-sum-exp split into I and Q parts.
    re = np.unique(np.round(syms.real, 12))
    im = np.unique(np.round(syms.imag, 12))
    if re.size * im.size != syms.size or not np.allclose(re, im):
        return None, 1.0
    grid = (re[:, None] + 1j * im[None, :]).ravel()
    if not _same_set(grid, syms):
        return None, 1.0
    scale = float(np.min(np.abs(re[np.abs(re) > 1e-12]))) if np.any(np.abs(re) > 1e-12) else 1.0
    levels = re / scale
    levels.setflags(write=False)
    return levels, scale


@dataclass(frozen=True)
class ThetaParams:
    """Normalized delay ``z`` (samples) and carrier phase ``phi`` (radians, stored mod 2*pi)."""

    z: float
    phi: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.z):
            raise ValueError("z must be finite")
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))


def phase_ramp(theta: ThetaParams, k, K: int):
    """exp(-j*2*pi*z*d[k]/K + j*phi) for subcarrier(s) ``k``."""
    d = freq_index_map(k, K)
    return np.exp(-2j * np.pi * theta.z * np.asarray(d) / K + 1j * theta.phi)


@dataclass(frozen=True, eq=False)
class ResourceGrid:
    """Allocation of every (symbol, subcarrier) cell to pilot, data or empty.

    ``pilots`` holds the known symbol of each pilot cell (zero elsewhere) and
    ``weights`` an amplitude scale applied to whatever the cell carries.
    """

    params: OfdmParams
    state: np.ndarray
    pilots: np.ndarray
    weights: np.ndarray
    pilot_power: float | None = None

    def __post_init__(self):
        shape = (self.params.n_sym, self.params.K)
        state = np.asarray(self.state, dtype=np.int8)
        pilots = np.asarray(self.pilots, dtype=complex)
        weights = np.asarray(self.weights, dtype=float)
        for name, arr in (("state", state), ("pilots", pilots), ("weights", weights)):
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if not np.all(np.isin(state, (EMPTY, PILOT, DATA))):
            raise ValueError("unknown cell state")
        is_pilot = state == PILOT
        if np.any(np.abs(pilots[is_pilot]) == 0):
            raise ValueError("pilot cells need a nonzero symbol")
        if self.pilot_power is not None and np.any(
            np.abs(np.abs(pilots[is_pilot]) ** 2 - self.pilot_power) > 1e-9
        ):
            raise ValueError("pilot symbols inconsistent with declared pilot power")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        pilots = np.where(is_pilot, pilots, 0)
        for arr in (state, pilots, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "pilots", pilots)
        object.__setattr__(self, "weights", weights)

    @property
    def pilot_mask(self) -> np.ndarray:
        return self.state == PILOT

    @property
    def data_mask(self) -> np.ndarray:
        return self.state == DATA

    @property
    def occupied_mask(self) -> np.ndarray:
        return self.state != EMPTY

    @property
    def n_pilot(self) -> int:
        return int(self.pilot_mask.sum())

    @property
    def n_data(self) -> int:
        return int(self.data_mask.sum())

    def subcarrier_sets(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Pilot and data subcarrier indices of symbol ``m``."""
        return np.flatnonzero(self.state[m] == PILOT), np.flatnonzero(self.state[m] == DATA)

    def with_known_data(self, symbols: np.ndarray) -> "ResourceGrid":
        """Copy where every data cell becomes a pilot carrying ``symbols[m, k]``."""
        state = np.where(self.data_mask, PILOT, self.state)
        pilots = np.where(self.data_mask, symbols, self.pilots)
        return ResourceGrid(self.params, state, pilots, self.weights)

    def select(self, mode: str) -> "ResourceGrid":
        """Grid restricted to the cells a given estimation mode uses."""
        keep = mode_mask(self, mode)
        state = np.where(keep, self.state, EMPTY)
        return ResourceGrid(self.params, state, self.pilots, self.weights, self.pilot_power)

    @classmethod
    def from_state(cls, params: OfdmParams, state, pilots=None, weights=None, pilot_seed: int = 0):
        state = np.asarray(state, dtype=np.int8)
        if pilots is None:
            pilots = default_pilot_symbols(state, pilot_seed)
        if weights is None:
            weights = np.ones(state.shape)
        return cls(params, state, pilots, weights)

    @classmethod
    def all_data(cls, params: OfdmParams) -> "ResourceGrid":
        state = np.full((params.n_sym, params.K), DATA, dtype=np.int8)
        return cls.from_state(params, state)

    @classmethod
    def from_pilot_subcarriers(cls, params: OfdmParams, pilot_k, pilot_seed: int = 0):
        """All-data grid with pilots on the listed subcarriers of every symbol."""
        state = np.full((params.n_sym, params.K), DATA, dtype=np.int8)
        state[:, list(pilot_k)] = PILOT
        return cls.from_state(params, state, pilot_seed=pilot_seed)


MODES = ("pilot-only", "data-only", "pilot+data")


def mode_mask(grid: ResourceGrid, mode: str) -> np.ndarray:
    if mode == "pilot-only":
        return grid.pilot_mask
    if mode == "data-only":
        return grid.data_mask
    if mode in ("pilot+data", "dd"):
        return grid.occupied_mask
    raise ValueError(f"unknown mode {mode!r}")


def default_pilot_symbols(state: np.ndarray, seed: int = 0) -> np.ndarray:
    """Unit-modulus QPSK pilots from a seeded sequence, placed on pilot cells."""
    rng = np.random.default_rng(seed)
    qpsk = Constellation.qpsk().symbols
    draws = qpsk[rng.integers(0, 4, size=state.shape)]
    return np.where(state == PILOT, draws, 0)


def state_from_runs(runs_per_symbol, K: int) -> np.ndarray:
    """Decode run-length cell maps, e.g. ``[[["D", 3], ["P", 1], ...], ...]``."""
    rows = []
    for m, runs in enumerate(runs_per_symbol):
        row = []
        for code, count in runs:
            if code not in _STATE_CODES:
                raise ValueError(f"symbol {m}: unknown cell code {code!r}")
            if count < 0:
                raise ValueError(f"symbol {m}: negative run length")
            row.extend([_STATE_CODES[code]] * int(count))
        if len(row) != K:
            raise ValueError(f"symbol {m}: run lengths sum to {len(row)}, expected K={K}")
        rows.append(row)
    return np.array(rows, dtype=np.int8)


def state_to_runs(state: np.ndarray) -> list:
    codes = {v: c for c, v in _STATE_CODES.items()}
    out = []
    for row in state:
        runs = []
        for v in row:
            c = codes[int(v)]
            if runs and runs[-1][0] == c:
                runs[-1][1] += 1
            else:
                runs.append([c, 1])
        out.append(runs)
    return out


def generate_payload(grid: ResourceGrid, constellation: Constellation, rng_seed) -> np.ndarray:
    """Transmitted symbols per cell: fixed pilots, i.i.d. uniform data draws, zeros when empty.

    Amplitude weights are applied.  ``rng_seed`` may be an int, a SeedSequence
    or a Generator.
    """
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, len(constellation), size=grid.state.shape)
    data = constellation.symbols[idx]
    x = np.where(grid.pilot_mask, grid.pilots, np.where(grid.data_mask, data, 0))
    return x * grid.weights
