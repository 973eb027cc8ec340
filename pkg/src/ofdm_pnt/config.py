"""JSON run configurations, validated fail-closed (unknown fields are rejected)."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, TypeAdapter, model_validator

from .alloc import BlockLayout, layout_to_grid
from .channel import StochasticChannelSpec
from .estimators import ESTIMATOR_MODES, EstimatorConfig
from .grid import Constellation, OfdmParams, ResourceGrid, state_from_runs
from .leo import LeoCampaignSpec, LinkBudget, Site, WalkerDelta
from .montecarlo import ExperimentSpec, ZzbSettings
from .zzb import DEFAULT_GH_ORDER

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OfdmBlock(_Strict):
    K: PositiveInt
    n_sym: PositiveInt
    delta_f: PositiveFloat
    t_a: PositiveFloat

    def params(self) -> OfdmParams:
        return OfdmParams(self.K, self.n_sym, self.delta_f, self.t_a)


class PrsBlocks(_Strict):
    n_blocks: PositiveInt = 20
    block_size: PositiveInt = 12
    comb: PositiveInt = 4
    prs_blocks: list[int]


class PilotEntry(_Strict):
    m: int
    k: int
    re: float
    im: float


class Allocation(_Strict):
    """Exactly one of: explicit run-length cell map, pilot subcarriers, PRS blocks, or all data."""

    cells: Optional[list[list[tuple[Literal["E", "P", "D"], int]]]] = None
    pilot_subcarriers: Optional[list[int]] = None
    prs: Optional[PrsBlocks] = None
    all_data: Optional[bool] = None
    pilot_seed: int = 0
    pilot_table: Optional[list[PilotEntry]] = None

    @model_validator(mode="after")
    def _one_kind(self):
        given = [x for x in (self.cells, self.pilot_subcarriers, self.prs, self.all_data) if x]
        if len(given) != 1:
            raise ValueError("give exactly one of cells, pilot_subcarriers, prs, all_data")
        return self

    def grid(self, params: OfdmParams) -> ResourceGrid:
        if self.prs is not None:
            lay = BlockLayout(self.prs.n_blocks, self.prs.block_size, self.prs.comb,
                              tuple(self.prs.prs_blocks), params.n_sym)
            grid = layout_to_grid(lay, params, self.pilot_seed)
        elif self.pilot_subcarriers is not None:
            grid = ResourceGrid.from_pilot_subcarriers(params, self.pilot_subcarriers, self.pilot_seed)
        elif self.cells is not None:
            state = state_from_runs(self.cells, params.K)
            if state.shape[0] != params.n_sym:
                raise ValueError(f"cell map has {state.shape[0]} symbols, expected n_sym={params.n_sym}")
            grid = ResourceGrid.from_state(params, state, pilot_seed=self.pilot_seed)
        else:
            grid = ResourceGrid.all_data(params)
        if self.pilot_table:
            pilots = np.array(grid.pilots)
            for e in self.pilot_table:
                if not grid.pilot_mask[e.m, e.k]:
                    raise ValueError(f"pilot_table entry ({e.m}, {e.k}) is not a pilot cell")
                pilots[e.m, e.k] = complex(e.re, e.im)
            grid = ResourceGrid(params, grid.state, pilots, grid.weights)
        return grid


class ChannelBlock(_Strict):
    mode: Literal["flat", "tapped"] = "flat"
    gain_jitter_db: float = Field(0.0, ge=0)
    n_taps: tuple[int, int] = (2, 4)
    tap_power_db: float = -20.0
    max_excess_delay_s: float = Field(50e-9, ge=0)
    per_symbol_drift: float = 0.0

    def spec(self) -> StochasticChannelSpec:
        return StochasticChannelSpec(self.mode, self.gain_jitter_db, tuple(self.n_taps), self.tap_power_db,
                                     self.max_excess_delay_s, self.per_symbol_drift)


Mode = Literal["pilot-only", "data-only", "pilot+data", "dd"]
BoundMode = Literal["pilot-only", "data-only", "pilot+data"]


class EstimatorBlock(_Strict):
    delta_z: PositiveFloat = 1.0 / 8
    delta_phi_deg: PositiveFloat = 15.0
    modes: list[Mode] = list(ESTIMATOR_MODES)

    def config(self) -> EstimatorConfig:
        return EstimatorConfig(self.delta_z, math.radians(self.delta_phi_deg))


class ZzbBlock(_Strict):
    zstep: PositiveFloat = 1.0 / 16
    phistep_deg: PositiveFloat = 15.0
    gh_order: int = Field(DEFAULT_GH_ORDER, ge=2)
    crlb_gh_order: int = Field(30, ge=10)
    modes: list[BoundMode] = ["pilot-only", "data-only", "pilot+data"]
    bound_mode: BoundMode = "pilot+data"

    def settings(self) -> ZzbSettings:
        return ZzbSettings(self.zstep, math.radians(self.phistep_deg), self.gh_order, self.crlb_gh_order)


class TrialsBlock(_Strict):
    n_channel: PositiveInt = 1
    n_noise: PositiveInt = 100


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    kind: Literal["experiment"]
    name: str = "experiment"
    ofdm: OfdmBlock
    allocation: Allocation
    constellation: Literal["qpsk", "16qam"] = "qpsk"
    channel: ChannelBlock = ChannelBlock()
    snr_db: list[float] = Field(min_length=1)
    estimator: EstimatorBlock = EstimatorBlock()
    trials: TrialsBlock = TrialsBlock()
    zzb: ZzbBlock = ZzbBlock()
    seed: int = Field(0, ge=0)

    def build(self) -> ExperimentSpec:
        params = self.ofdm.params()
        return ExperimentSpec(
            grid=self.allocation.grid(params),
            constellation=Constellation.from_name(self.constellation),
            snr_db=tuple(self.snr_db),
            modes=tuple(self.estimator.modes),
            channel=self.channel.spec(),
            estimator=self.estimator.config(),
            n_channel=self.trials.n_channel,
            n_noise=self.trials.n_noise,
            seed=self.seed,
            zzb=self.zzb.settings(),
        )


class PrsSearchConfig(_Strict):
    schema_version: Literal[1]
    kind: Literal["prs_search"]
    name: str = "prs_search"
    ofdm: OfdmBlock
    n_blocks: PositiveInt = 20
    block_size: PositiveInt = 12
    comb: PositiveInt = 4
    n_prs: list[PositiveInt] = Field(min_length=1)
    snr_db: list[float] = Field(min_length=1)
    top: PositiveInt = 5
    constellation: Literal["qpsk", "16qam"] = "qpsk"
    zzb: ZzbBlock = ZzbBlock()
    seed: int = Field(0, ge=0)


class ShellBlock(_Strict):
    altitude_m: PositiveFloat = 550e3
    inclination_deg: float = 53.0
    total: PositiveInt = 1584
    planes: PositiveInt = 22
    phasing: int = Field(39, ge=0)
    raan0_deg: float = 0.0


class SiteBlock(_Strict):
    lat_deg: float = Field(30.0, ge=-90, le=90)
    lon_deg: float = -97.0
    alt_m: float = 0.0


class LinkBlock(_Strict):
    carrier_hz: PositiveFloat = 10.7e9
    eirp_dbw_per_4khz: float = -15.0
    rx_gain_db: float = 30.0
    noise_dbm_hz: float = -173.8
    extra_loss_db: float = 0.0


class LeoConfig(_Strict):
    schema_version: Literal[1]
    kind: Literal["leo_campaign"]
    name: str = "leo"
    ofdm: OfdmBlock
    allocation: Allocation
    constellation: Literal["qpsk", "16qam"] = "qpsk"
    shell: ShellBlock = ShellBlock()
    site: SiteBlock = SiteBlock()
    epoch_s: float = 0.0
    mask_deg: float = 30.0
    t_burst_s: PositiveFloat = 1e-3
    clock_offset_s: float = 0.0
    link: LinkBlock = LinkBlock()
    channel: ChannelBlock = ChannelBlock()
    estimator: EstimatorBlock = EstimatorBlock()
    trials: TrialsBlock = TrialsBlock(n_channel=100, n_noise=200)
    zzb: ZzbBlock = ZzbBlock()
    seed: int = Field(0, ge=0)

    def build(self) -> LeoCampaignSpec:
        params = self.ofdm.params()
        s = self.shell
        return LeoCampaignSpec(
            grid=self.allocation.grid(params),
            constellation=Constellation.from_name(self.constellation),
            shell=WalkerDelta(s.altitude_m, s.inclination_deg, s.total, s.planes, s.phasing, s.raan0_deg),
            site=Site(self.site.lat_deg, self.site.lon_deg, self.site.alt_m),
            epoch=self.epoch_s,
            mask_deg=self.mask_deg,
            t_burst=self.t_burst_s,
            clock_offset=self.clock_offset_s,
            link=LinkBudget(**self.link.model_dump()),
            channel=self.channel.spec(),
            estimator=self.estimator.config(),
            modes=tuple(self.estimator.modes),
            n_channel=self.trials.n_channel,
            n_noise=self.trials.n_noise,
            seed=self.seed,
            zzb=self.zzb.settings(),
        )


AnyConfig = Union[ExperimentConfig, PrsSearchConfig, LeoConfig]
_ADAPTER = TypeAdapter(
    __import__("typing").Annotated[AnyConfig, Field(discriminator="kind")]
)


def parse_config(data: dict) -> AnyConfig:
    """Validate a config document; raises pydantic.ValidationError on schema violations."""
    return _ADAPTER.validate_python(data)


def load_config(path) -> AnyConfig:
    return parse_config(json.loads(Path(path).read_text(encoding="utf-8")))


def apply_overrides(cfg: AnyConfig, seed=None, zstep=None, phistep_deg=None, gh_order=None) -> AnyConfig:
    upd = {}
    if seed is not None:
        upd["seed"] = seed
    z = {}
    if zstep is not None:
        z["zstep"] = zstep
    if phistep_deg is not None:
        z["phistep_deg"] = phistep_deg
    if gh_order is not None:
        z["gh_order"] = gh_order
    if z:
        upd["zzb"] = cfg.zzb.model_copy(update=z)
    data = cfg.model_copy(update=upd).model_dump(mode="json")
    return parse_config(data)


def config_hash(cfg: AnyConfig) -> str:
    """SHA-256 of the canonical JSON form of the resolved config."""
    text = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
