"""Shared domain vocabulary: vehicles, contents, radio channel and pricing constants.

Unit conventions (fixed here, converted only at config parse time):
cache quantities in bytes, transmitted payloads in bits, time in seconds,
transmit/noise power in mW, distances in meters, money in coins (floats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class DegenerateGeometryError(ValueError):
    """Two vehicles occupy the same point, making the path-loss term singular."""


class UnreachableError(ValueError):
    """Operation requires a positive data rate but the link rate is zero."""


class Heading(Enum):
    NORTH = "north"
    SOUTH = "south"
    WEST = "west"
    EAST = "east"

    @property
    def unit(self) -> tuple[float, float]:
        return _HEADING_UNIT[self]

    @property
    def reverse(self) -> "Heading":
        return _HEADING_REVERSE[self]


_HEADING_UNIT = {
    Heading.NORTH: (0.0, 1.0),
    Heading.SOUTH: (0.0, -1.0),
    Heading.WEST: (-1.0, 0.0),
    Heading.EAST: (1.0, 0.0),
}
_HEADING_REVERSE = {
    Heading.NORTH: Heading.SOUTH,
    Heading.SOUTH: Heading.NORTH,
    Heading.WEST: Heading.EAST,
    Heading.EAST: Heading.WEST,
}

HEADINGS = (Heading.NORTH, Heading.SOUTH, Heading.WEST, Heading.EAST)


class Role(Enum):
    REQUESTER = "requester"
    PROVIDER = "provider"


@dataclass(frozen=True)
class Content:
    """A content item: transmitted payload, cache footprint and delivery deadline.

    The payload moved over the air (``size_bits``) and the caching resource it
    occupies at the provider (``cache_bytes``) are independent quantities.
    """

    size_bits: float
    cache_bytes: float
    deadline_s: float

    def __post_init__(self):
        if self.size_bits <= 0:
            raise ValueError(f"size_bits must be > 0, got {self.size_bits}")
        if self.cache_bytes <= 0:
            raise ValueError(f"cache_bytes must be > 0, got {self.cache_bytes}")
        if self.deadline_s <= 0:
            raise ValueError(f"deadline_s must be > 0, got {self.deadline_s}")


@dataclass(frozen=True)
class VehicleState:
    """Immutable snapshot of one vehicle.

    ``wait_remaining_s`` carries the rest of an intersection hold across
    mobility steps; it is 0 for a vehicle in motion.
    """

    vid: str
    role: Role
    position: tuple[float, float]
    heading: Heading
    velocity: float
    cache_capacity: float = 0.0
    content: Content | None = None
    wallet: float = 0.0
    wait_remaining_s: float = 0.0

    def __post_init__(self):
        if self.role is Role.PROVIDER and self.cache_capacity <= 0:
            raise ValueError(f"provider {self.vid} needs cache_capacity > 0")
        if self.role is Role.REQUESTER and self.content is None:
            raise ValueError(f"requester {self.vid} needs a content item")
        if self.wallet < 0:
            raise ValueError(f"wallet balance must be >= 0, got {self.wallet}")


@dataclass(frozen=True)
class ChannelParams:
    """V2V radio parameters for the log-SNR rate model."""

    bandwidth_hz: float
    tx_power_mw: float
    noise_mw: float
    v2v_range_m: float
    channel_gain: float = 1.0
    path_loss_exp: float = 2.0

    def __post_init__(self):
        for name in ("bandwidth_hz", "tx_power_mw", "noise_mw", "v2v_range_m",
                     "channel_gain", "path_loss_exp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class EconomicParams:
    """Prices that turn caching and energy use into coins."""

    cache_price: float        # coins per byte of caching resource
    energy_price: float       # coins per Joule
    cache_energy_per_byte: float  # Joules spent caching one byte
    penalty: float            # negative reward for an infeasible assignment

    def __post_init__(self):
        if self.cache_price <= 0:
            raise ValueError("cache_price must be > 0")
        if self.energy_price <= 0:
            raise ValueError("energy_price must be > 0")
        if self.cache_energy_per_byte < 0:
            raise ValueError("cache_energy_per_byte must be >= 0")
        if self.penalty >= 0:
            raise ValueError(f"penalty must be < 0, got {self.penalty}")


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def rate_from_distance(d, chan: ChannelParams):
    """Link rate in bits/s at separation ``d`` (scalar or array), 0 beyond range.

    The same expression backs both the scalar operation and the matrix builder
    so the two can never drift apart.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DegenerateGeometryError("vehicle separation must be > 0")
    snr = chan.tx_power_mw * chan.channel_gain * d ** (-chan.path_loss_exp) / chan.noise_mw
    rate = chan.bandwidth_hz * np.log2(1.0 + snr)
    rate = np.where(d > chan.v2v_range_m, 0.0, rate)
    if rate.ndim == 0:
        return float(rate)
    return rate


def data_rate(requester: VehicleState, provider: VehicleState, chan: ChannelParams) -> float:
    """V2V data rate between two vehicles; 0 when they are out of range."""
    d = distance(requester.position, provider.position)
    if d == 0.0:
        raise DegenerateGeometryError(
            f"vehicles {requester.vid} and {provider.vid} are coincident")
    return rate_from_distance(d, chan)


def tx_latency(content: Content, rate: float) -> float:
    """Seconds needed to push the content payload through a link of ``rate`` bits/s."""
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if content.size_bits == 0:
        return 0.0
    if rate == 0.0:
        raise UnreachableError("zero rate: content cannot be delivered")
    return content.size_bits / rate


def energy_cost(content: Content, rate: float, chan: ChannelParams,
                econ: EconomicParams) -> float:
    """Priced energy of one caching event: transmission plus cache write.

    Transmission energy is tx power (W) times air time of the payload; the
    cache write is charged per byte of caching resource.
    """
    if rate <= 0.0:
        raise UnreachableError("zero rate: energy for an unreachable pair is undefined")
    air_time = content.size_bits / rate
    joules = (chan.tx_power_mw / 1000.0) * air_time \
        + econ.cache_energy_per_byte * content.cache_bytes
    return econ.energy_price * joules


def pair_payment(content: Content, econ: EconomicParams) -> float:
    """Coins a requester pays its provider for one caching event."""
    return econ.cache_price * content.cache_bytes
