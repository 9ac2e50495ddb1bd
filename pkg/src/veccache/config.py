"""Scenario configuration: parsing, validation and unit conversion.

Configs are JSON documents with flat sections mirroring the parameter groups.
Unknown keys are rejected and every complaint carries the field path. All
unit conversion happens here (dBm to mW, MB/GB to bits/bytes, GHz to Hz);
the rest of the package works in base units only. MB and GB are decimal
(1e6 / 1e9 bytes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .agent import AgentConfig
from .mobility import BoundingBox, GridParams
from .model import ChannelParams, EconomicParams, dbm_to_mw

MB = 1e6          # bytes
GB = 1e9          # bytes
KB = 1e3          # bytes
BITS_PER_BYTE = 8.0


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


@dataclass(frozen=True)
class Counts:
    requesters: int
    providers: int
    stations: int
    commission: int

    def __post_init__(self):
        for name in ("requesters", "providers", "stations", "commission"):
            if getattr(self, name) < 1:
                raise ConfigError(f"counts.{name} must be >= 1")
        if self.commission % 2 == 0 or self.commission < 3:
            raise ConfigError("counts.commission must be an odd integer >= 3")
        if self.commission > self.stations:
            raise ConfigError("counts.commission cannot exceed counts.stations")


@dataclass(frozen=True)
class MobilityConfig:
    source: str                      # "grid" or "trace"
    velocity_ms: tuple[float, float]
    step_dt_s: float
    grid: GridParams
    trace_path: str | None
    bbox: BoundingBox


@dataclass(frozen=True)
class ConsensusConfig:
    wire_rate: float                 # bit-meters per second on wired links
    collect_delay_s: float
    verify_cycles_per_bit: float
    block_bits: tuple[float, float]  # per-round uniform draw
    result_bits: tuple[float, float]
    audit_bits: tuple[float, float]
    compute_hz: tuple[float, float]  # per-station uniform draw
    block_tx_cap: int
    station_spacing_m: float


@dataclass(frozen=True)
class LedgerConfig:
    initial_balance: float
    freshness_window_s: float


@dataclass(frozen=True)
class StateScales:
    """Constants that map raw state components into [0, 1]."""

    rate: float
    latency: float
    energy: float
    cache: float
    deadline: float
    capacity: float


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    counts: Counts
    chan: ChannelParams
    econ: EconomicParams
    content_size_bits: tuple[float, float]
    content_cache_bytes: tuple[float, float]
    content_deadline_s: tuple[float, float]
    capacity_bytes: tuple[float, float]
    mobility: MobilityConfig
    agent: AgentConfig
    consensus: ConsensusConfig
    ledger: LedgerConfig
    scales: StateScales = field(init=False)

    def __post_init__(self):
        rate_scale = self.chan.bandwidth_hz * _log2_1p(
            self.chan.tx_power_mw * self.chan.channel_gain / self.chan.noise_mw)
        # worst in-range energy: slowest link (range edge), largest content
        edge_rate = self.chan.bandwidth_hz * _log2_1p(
            self.chan.tx_power_mw * self.chan.channel_gain
            * self.chan.v2v_range_m ** (-self.chan.path_loss_exp) / self.chan.noise_mw)
        energy_scale = self.econ.energy_price * (
            (self.chan.tx_power_mw / 1000.0)
            * self.content_size_bits[1] / max(edge_rate, 1e-12)
            + self.econ.cache_energy_per_byte * self.content_cache_bytes[1])
        object.__setattr__(self, "scales", StateScales(
            rate=rate_scale,
            latency=self.content_deadline_s[1],
            energy=max(energy_scale, 1e-12),
            cache=self.content_cache_bytes[1],
            deadline=self.content_deadline_s[1],
            capacity=self.capacity_bytes[1],
        ))

    @property
    def state_dim(self) -> int:
        i, p = self.counts.requesters, self.counts.providers
        return 3 * i * p + 4 * (i + p) + 2 * i + p

    @property
    def action_dim(self) -> int:
        return self.counts.requesters * self.counts.providers


def _log2_1p(x: float) -> float:
    import math
    return math.log2(1.0 + x)


def _expect_mapping(doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")


def _check_keys(doc: dict, allowed, path: str):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _get(doc: dict, key: str, path: str, kind, default=None):
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}: missing")
    value = doc[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}")


def _get_range(doc: dict, key: str, path: str, scale: float = 1.0,
               default=None) -> tuple[float, float]:
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}: missing")
    value = doc[key]
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"{path}.{key}: expected [min, max]")
    lo, hi = float(value[0]) * scale, float(value[1]) * scale
    if lo > hi:
        raise ConfigError(f"{path}.{key}: min {value[0]} exceeds max {value[1]}")
    return lo, hi


def parse_config(doc: dict) -> ScenarioConfig:
    _expect_mapping(doc, "config")
    _check_keys(doc, ["seed", "counts", "channel", "economics", "content",
                      "capacity", "mobility", "agent", "consensus", "ledger"],
                "config")

    seed = _get(doc, "seed", "config", int, default=0)

    c = doc.get("counts", {})
    _expect_mapping(c, "counts")
    _check_keys(c, ["requesters", "providers", "stations", "commission"], "counts")
    counts = Counts(
        _get(c, "requesters", "counts", int),
        _get(c, "providers", "counts", int),
        _get(c, "stations", "counts", int, default=6),
        _get(c, "commission", "counts", int, default=3),
    )

    ch = doc.get("channel", {})
    _expect_mapping(ch, "channel")
    _check_keys(ch, ["bandwidth_hz", "tx_power_dbm", "noise_mw", "v2v_range_m",
                     "channel_gain", "path_loss_exp"], "channel")
    try:
        chan = ChannelParams(
            bandwidth_hz=_get(ch, "bandwidth_hz", "channel", float, default=1e7),
            tx_power_mw=dbm_to_mw(_get(ch, "tx_power_dbm", "channel", float, default=24.0)),
            noise_mw=_get(ch, "noise_mw", "channel", float, default=1e-11),
            v2v_range_m=_get(ch, "v2v_range_m", "channel", float, default=500.0),
            channel_gain=_get(ch, "channel_gain", "channel", float, default=1.0),
            path_loss_exp=_get(ch, "path_loss_exp", "channel", float, default=2.0),
        )
    except ValueError as exc:
        raise ConfigError(f"channel: {exc}") from None

    ec = doc.get("economics", {})
    _expect_mapping(ec, "economics")
    _check_keys(ec, ["cache_price_per_gb", "energy_price", "cache_energy_per_gb",
                     "penalty"], "economics")
    try:
        econ = EconomicParams(
            cache_price=_get(ec, "cache_price_per_gb", "economics", float, default=2.0) / GB,
            energy_price=_get(ec, "energy_price", "economics", float, default=0.1),
            cache_energy_per_byte=_get(ec, "cache_energy_per_gb", "economics", float,
                                       default=1.0) / GB,
            penalty=_get(ec, "penalty", "economics", float, default=-100.0),
        )
    except ValueError as exc:
        raise ConfigError(f"economics: {exc}") from None

    co = doc.get("content", {})
    _expect_mapping(co, "content")
    _check_keys(co, ["size_mb", "cache_gb", "deadline_s"], "content")
    size_bits = _get_range(co, "size_mb", "content", MB * BITS_PER_BYTE, default=(10 * MB * 8, 50 * MB * 8))
    cache_bytes = _get_range(co, "cache_gb", "content", GB, default=(0.5 * GB, 2.5 * GB))
    deadline = _get_range(co, "deadline_s", "content", 1.0, default=(5.0, 10.0))

    cap = doc.get("capacity", {})
    _expect_mapping(cap, "capacity")
    _check_keys(cap, ["cache_gb"], "capacity")
    capacity = _get_range(cap, "cache_gb", "capacity", GB, default=(5.0 * GB, 5.0 * GB))

    mo = doc.get("mobility", {})
    _expect_mapping(mo, "mobility")
    _check_keys(mo, ["source", "velocity_ms", "step_dt_s", "grid", "trace"], "mobility")
    source = _get(mo, "source", "mobility", str, default="grid")
    if source not in ("grid", "trace"):
        raise ConfigError(f"mobility.source: expected 'grid' or 'trace', got {source!r}")
    velocity = _get_range(mo, "velocity_ms", "mobility", default=(10.0, 15.0))
    step_dt = _get(mo, "step_dt_s", "mobility", float, default=1.0)
    if step_dt <= 0:
        raise ConfigError("mobility.step_dt_s must be > 0")

    g = mo.get("grid", {})
    _expect_mapping(g, "mobility.grid")
    _check_keys(g, ["block_size_m", "map_extent_m", "wait_time_s", "wait_prob"],
                "mobility.grid")
    block = _get(g, "block_size_m", "mobility.grid", float, default=200.0)
    extent = _get_range(g, "map_extent_m", "mobility.grid", default=(1000.0, 1600.0))
    # streets must end on intersections or vehicles could drive off the map
    extent = (max(int(extent[0] / block), 1) * block, max(int(extent[1] / block), 1) * block)
    try:
        grid = GridParams(
            intersection_density=1.0 / block,
            wait_time_s=_get(g, "wait_time_s", "mobility.grid", float, default=30.0),
            wait_prob=_get(g, "wait_prob", "mobility.grid", float, default=0.5),
            block_size_m=block,
            map_extent_m=extent,
        )
    except ValueError as exc:
        raise ConfigError(f"mobility.grid: {exc}") from None

    tr = mo.get("trace", {})
    _expect_mapping(tr, "mobility.trace")
    _check_keys(tr, ["path", "bbox"], "mobility.trace")
    trace_path = tr.get("path")
    if trace_path is not None and not isinstance(trace_path, str):
        raise ConfigError("mobility.trace.path: expected a string or null")
    bbox_vals = tr.get("bbox", [40.668671, 40.678719, -73.950915, -73.930269])
    if not (isinstance(bbox_vals, (list, tuple)) and len(bbox_vals) == 4):
        raise ConfigError("mobility.trace.bbox: expected [lat_min, lat_max, lon_min, lon_max]")
    try:
        bbox = BoundingBox(*[float(v) for v in bbox_vals])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mobility.trace.bbox: {exc}") from None
    if source == "trace" and trace_path is None:
        raise ConfigError("mobility.trace.path: required when mobility.source is 'trace'")
    mobility = MobilityConfig(source, velocity, step_dt, grid, trace_path, bbox)

    ag = doc.get("agent", {})
    _expect_mapping(ag, "agent")
    _check_keys(ag, ["actor_lr", "critic_lr", "discount", "target_blend", "batch_size",
                     "episodes", "steps_per_episode", "hidden", "ou_theta", "ou_sigma",
                     "ou_sigma_final", "replay_capacity", "zero_threshold",
                     "reward_scale", "dtype"], "agent")
    hidden = ag.get("hidden", [128, 128])
    if (not isinstance(hidden, (list, tuple))
            or not all(isinstance(h, int) and h > 0 for h in hidden)):
        raise ConfigError("agent.hidden: expected a list of positive ints")
    try:
        agent = AgentConfig(
            actor_lr=_get(ag, "actor_lr", "agent", float, default=1e-2),
            critic_lr=_get(ag, "critic_lr", "agent", float, default=1e-2),
            discount=_get(ag, "discount", "agent", float, default=0.9),
            target_blend=_get(ag, "target_blend", "agent", float, default=0.01),
            batch_size=_get(ag, "batch_size", "agent", int, default=32),
            episodes=_get(ag, "episodes", "agent", int, default=4000),
            steps_per_episode=_get(ag, "steps_per_episode", "agent", int, default=20),
            penalty=econ.penalty,
            hidden=tuple(hidden),
            ou_theta=_get(ag, "ou_theta", "agent", float, default=0.15),
            ou_sigma=_get(ag, "ou_sigma", "agent", float, default=0.2),
            ou_sigma_final=_get(ag, "ou_sigma_final", "agent", float, default=0.02),
            replay_capacity=_get(ag, "replay_capacity", "agent", int, default=100_000),
            zero_threshold=_get(ag, "zero_threshold", "agent", float, default=0.05),
            reward_scale=_get(ag, "reward_scale", "agent", float, default=100.0),
            dtype=_get(ag, "dtype", "agent", str, default="float64"),
        )
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from None

    cs = doc.get("consensus", {})
    _expect_mapping(cs, "consensus")
    _check_keys(cs, ["wire_rate", "collect_delay_s", "verify_cycles_per_bit",
                     "block_mb", "result_mb", "audit_kb", "compute_ghz",
                     "block_tx_cap", "station_spacing_m"], "consensus")
    consensus = ConsensusConfig(
        wire_rate=_get(cs, "wire_rate", "consensus", float, default=6.25e10),
        collect_delay_s=_get(cs, "collect_delay_s", "consensus", float, default=0.5),
        verify_cycles_per_bit=_get(cs, "verify_cycles_per_bit", "consensus", float,
                                   default=150.0),
        block_bits=_get_range(cs, "block_mb", "consensus", MB * BITS_PER_BYTE,
                              default=(10 * MB * 8, 50 * MB * 8)),
        result_bits=_get_range(cs, "result_mb", "consensus", MB * BITS_PER_BYTE,
                               default=(1 * MB * 8, 5 * MB * 8)),
        audit_bits=_get_range(cs, "audit_kb", "consensus", KB * BITS_PER_BYTE,
                              default=(100 * KB * 8, 500 * KB * 8)),
        compute_hz=_get_range(cs, "compute_ghz", "consensus", 1e9, default=(5e9, 10e9)),
        block_tx_cap=_get(cs, "block_tx_cap", "consensus", int, default=8),
        station_spacing_m=_get(cs, "station_spacing_m", "consensus", float, default=500.0),
    )
    if consensus.block_tx_cap < 1:
        raise ConfigError("consensus.block_tx_cap must be >= 1")

    le = doc.get("ledger", {})
    _expect_mapping(le, "ledger")
    _check_keys(le, ["initial_balance", "freshness_window_s"], "ledger")
    ledger = LedgerConfig(
        initial_balance=_get(le, "initial_balance", "ledger", float, default=1e6),
        freshness_window_s=_get(le, "freshness_window_s", "ledger", float, default=60.0),
    )

    return ScenarioConfig(seed, counts, chan, econ, size_bits, cache_bytes, deadline,
                          capacity, mobility, agent, consensus, ledger)


def load_config(path=None) -> ScenarioConfig:
    """Parse a config file; without a path, the packaged defaults are used."""
    if path is None:
        text = resources.files("veccache").joinpath("data/default.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc)


def default_document() -> dict:
    """The shipped default scenario as a plain dictionary."""
    text = resources.files("veccache").joinpath("data/default.json").read_text()
    return json.loads(text)
