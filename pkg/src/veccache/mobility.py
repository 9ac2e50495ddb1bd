"""Manhattan-grid vehicle motion and replay of recorded position traces.

Vehicles drive on an orthogonal street grid at constant speed, may halt at
intersections with a speed-dependent probability, and otherwise continue on a
uniformly chosen legal heading (U-turns excluded unless forced at a dead end).
Recorded traces are ingested from CSV and projected to local meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .model import HEADINGS, Heading, VehicleState

_ON_STREET_TOL = 1e-6
EARTH_RADIUS_M = 6371000.0


class OffGridError(ValueError):
    """Vehicle position does not lie on a street of the grid."""


class TraceFormatError(ValueError):
    """A trace CSV row is malformed or the filtered trace is empty."""


@dataclass(frozen=True)
class GridParams:
    """Street-grid geometry and intersection waiting behaviour."""

    intersection_density: float   # intersections per meter of street
    wait_time_s: float            # maximum tolerated hold at an intersection
    wait_prob: float              # probability that a hold is imposed
    block_size_m: float           # distance between adjacent intersections
    map_extent_m: tuple[float, float]

    def __post_init__(self):
        if self.intersection_density <= 0:
            raise ValueError("intersection_density must be > 0")
        if self.wait_time_s < 0:
            raise ValueError("wait_time_s must be >= 0")
        if not 0.0 <= self.wait_prob <= 1.0:
            raise ValueError("wait_prob must be in [0, 1]")
        if self.block_size_m <= 0:
            raise ValueError("block_size_m must be > 0")
        if any(e <= 0 for e in self.map_extent_m):
            raise ValueError("map_extent_m must be positive")
        # the two ways of stating street spacing must agree to within 1%
        if abs(1.0 / self.intersection_density - self.block_size_m) > 0.01 * self.block_size_m:
            raise ValueError(
                f"1/intersection_density = {1.0 / self.intersection_density:.3f} m "
                f"disagrees with block_size_m = {self.block_size_m:.3f} m by more than 1%")


def move_probability(g: GridParams, velocity: float) -> float:
    """Probability that a vehicle rolls through an intersection without stopping."""
    if velocity <= 0:
        raise ValueError(f"velocity must be > 0, got {velocity}")
    w = g.wait_time_s * g.wait_prob * g.intersection_density * velocity
    return 2.0 / (2.0 + w)


def stop_probability(g: GridParams, velocity: float) -> float:
    """Complement of move_probability: the chance of halting at an intersection."""
    if velocity <= 0:
        raise ValueError(f"velocity must be > 0, got {velocity}")
    w = g.wait_time_s * g.wait_prob * g.intersection_density * velocity
    return w / (2.0 + w)


def _snap(value: float, block: float) -> float:
    return round(value / block) * block


def _on_lattice(value: float, block: float) -> bool:
    return abs(value - _snap(value, block)) < _ON_STREET_TOL


def assert_on_grid(position: tuple[float, float], g: GridParams):
    x, y = position
    w, h = g.map_extent_m
    if not (-_ON_STREET_TOL <= x <= w + _ON_STREET_TOL
            and -_ON_STREET_TOL <= y <= h + _ON_STREET_TOL):
        raise OffGridError(f"position {position} outside map extent {g.map_extent_m}")
    if not (_on_lattice(x, g.block_size_m) or _on_lattice(y, g.block_size_m)):
        raise OffGridError(f"position {position} is not on a street axis")


def _legal_headings(node: tuple[float, float], g: GridParams, arriving: Heading) -> list[Heading]:
    """Headings leaving an intersection that stay on the map; no U-turn unless forced."""
    x, y = node
    w, h = g.map_extent_m
    legal = []
    for hd in HEADINGS:
        ux, uy = hd.unit
        # target one block away must remain inside the extent
        tx = x + ux * g.block_size_m
        ty = y + uy * g.block_size_m
        if -_ON_STREET_TOL <= tx <= w + _ON_STREET_TOL and -_ON_STREET_TOL <= ty <= h + _ON_STREET_TOL:
            legal.append(hd)
    no_uturn = [hd for hd in legal if hd is not arriving.reverse]
    return no_uturn if no_uturn else legal


def _next_intersection(pos: tuple[float, float], heading: Heading, g: GridParams) -> float:
    """Distance along the current heading to the next lattice node."""
    x, y = pos
    ux, uy = heading.unit
    block = g.block_size_m
    if ux != 0.0:
        coord, direction = x, ux
    else:
        coord, direction = y, uy
    k = coord / block
    if direction > 0:
        nxt = math.floor(k + _ON_STREET_TOL / block) + 1
    else:
        nxt = math.ceil(k - _ON_STREET_TOL / block) - 1
    return abs(nxt * block - coord)


def advance(state: VehicleState, g: GridParams, dt: float,
            rng: np.random.Generator) -> tuple[VehicleState, int, int]:
    """Advance one vehicle by ``dt`` seconds; returns (state, arrivals, stops).

    Intersection arrivals draw a halt with ``stop_probability``; a halted
    vehicle stays put for half the maximum waiting time (the mean hold implied
    by the move-probability model) before picking its next heading.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if state.velocity == 0.0:
        return state, 0, 0
    assert_on_grid(state.position, g)

    x, y = state.position
    heading = state.heading
    wait = state.wait_remaining_s
    remaining = dt
    p_stop = stop_probability(g, state.velocity)
    arrivals = 0
    stops = 0

    while remaining > 1e-12:
        if wait > 0.0:
            used = min(wait, remaining)
            wait -= used
            remaining -= used
            if wait <= 1e-12:
                wait = 0.0
                node = (_snap(x, g.block_size_m), _snap(y, g.block_size_m))
                choices = _legal_headings(node, g, heading)
                heading = choices[rng.integers(len(choices))]
            continue
        d_next = _next_intersection((x, y), heading, g)
        t_next = d_next / state.velocity
        ux, uy = heading.unit
        if t_next > remaining:
            x += ux * state.velocity * remaining
            y += uy * state.velocity * remaining
            remaining = 0.0
            break
        x = _snap(x + ux * d_next, g.block_size_m)
        y = _snap(y + uy * d_next, g.block_size_m)
        remaining -= t_next
        arrivals += 1
        if rng.random() < p_stop:
            stops += 1
            wait = g.wait_time_s / 2.0
        else:
            choices = _legal_headings((x, y), g, heading)
            heading = choices[rng.integers(len(choices))]

    new_state = replace(state, position=(x, y), heading=heading, wait_remaining_s=wait)
    assert_on_grid(new_state.position, g)
    return new_state, arrivals, stops


def step(state: VehicleState, g: GridParams, dt: float,
         rng: np.random.Generator) -> VehicleState:
    """Move a vehicle along the grid for ``dt`` seconds."""
    new_state, _, _ = advance(state, g, dt, rng)
    return new_state


def random_grid_position(g: GridParams, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform position on the street network (uniform over total street length)."""
    w, h = g.map_extent_m
    block = g.block_size_m
    n_vert = int(math.floor(w / block + 1e-9)) + 1
    n_horz = int(math.floor(h / block + 1e-9)) + 1
    len_vert = n_vert * h
    len_horz = n_horz * w
    if rng.random() < len_vert / (len_vert + len_horz):
        x = float(rng.integers(n_vert)) * block
        y = float(rng.uniform(0.0, h))
    else:
        x = float(rng.uniform(0.0, w))
        y = float(rng.integers(n_horz)) * block
    return (min(x, w), min(y, h))


def random_heading_for(position: tuple[float, float], g: GridParams,
                       rng: np.random.Generator) -> Heading:
    """A heading consistent with the street the position lies on."""
    x, y = position
    block = g.block_size_m
    on_vert = _on_lattice(x, block)
    on_horz = _on_lattice(y, block)
    if on_vert and on_horz:
        options = list(HEADINGS)
    elif on_vert:
        options = [Heading.NORTH, Heading.SOUTH]
    elif on_horz:
        options = [Heading.WEST, Heading.EAST]
    else:
        raise OffGridError(f"position {position} is not on a street axis")
    w, h = g.map_extent_m
    legal = []
    for hd in options:
        ux, uy = hd.unit
        tx, ty = x + ux * 1e-3, y + uy * 1e-3
        if 0.0 <= tx <= w and 0.0 <= ty <= h:
            legal.append(hd)
    return legal[rng.integers(len(legal))]


@dataclass(frozen=True)
class BoundingBox:
    """Geographic box with an equirectangular projection about its center."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ValueError("bounding box must have positive extent")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0)

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def to_xy(self, lat: float, lon: float) -> tuple[float, float]:
        lat0, lon0 = self.center
        x = math.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
        y = math.radians(lat - lat0) * EARTH_RADIUS_M
        return x, y

    def to_latlon(self, x: float, y: float) -> tuple[float, float]:
        lat0, lon0 = self.center
        lat = lat0 + math.degrees(y / EARTH_RADIUS_M)
        lon = lon0 + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
        return lat, lon

    def extent_m(self) -> tuple[float, float]:
        x0, y0 = self.to_xy(self.lat_min, self.lon_min)
        x1, y1 = self.to_xy(self.lat_max, self.lon_max)
        return (x1 - x0, y1 - y0)


TRACE_HEADER = ["timestamp", "vehicle_id", "lat", "lon"]


class TracePlayback:
    """Per-vehicle position series with linear interpolation between samples."""

    def __init__(self, series: dict[str, tuple[np.ndarray, np.ndarray]]):
        if not series:
            raise TraceFormatError("trace contains no records inside the bounding box")
        self._series = series

    @property
    def vehicle_ids(self) -> list[str]:
        return list(self._series.keys())

    def time_range(self, vid: str) -> tuple[float, float]:
        t, _ = self._series[vid]
        return float(t[0]), float(t[-1])

    def position(self, vid: str, t: float) -> tuple[float, float]:
        times, xy = self._series[vid]
        x = float(np.interp(t, times, xy[:, 0]))
        y = float(np.interp(t, times, xy[:, 1]))
        return x, y


def ingest_trace(path, bbox: BoundingBox) -> TracePlayback:
    """Load a trace CSV, filter to ``bbox`` and project to local meters.

    Rows outside the box are dropped; exact duplicate coordinates are nudged
    by at most 0.1 m so no two samples coincide. Raises TraceFormatError with
    the offending line number for malformed rows.
    """
    per_vehicle: dict[str, list[tuple[float, float, float]]] = {}
    seen: dict[tuple[float, float], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != TRACE_HEADER:
            raise TraceFormatError(f"line 1: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                ts = float(row[0])
                lat = float(row[2])
                lon = float(row[3])
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            vid = row[1].strip()
            if not vid:
                raise TraceFormatError(f"line {lineno}: empty vehicle_id")
            if not bbox.contains(lat, lon):
                continue
            x, y = bbox.to_xy(lat, lon)
            n = seen.get((x, y), 0)
            seen[(x, y)] = n + 1
            if n > 0:
                # deterministic jitter <= 0.1 m keeps pairwise distances positive
                x += 0.01 * ((n - 1) % 10 + 1) * (1 if n % 2 else -1)
            per_vehicle.setdefault(vid, []).append((ts, x, y))

    series = {}
    for vid, rows in per_vehicle.items():
        rows.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in rows])
        xy = np.array([[r[1], r[2]] for r in rows])
        series[vid] = (t, xy)
    return TracePlayback(series)


def write_trace(path, records) -> None:
    """Write (timestamp, vehicle_id, lat, lon) records in the trace CSV format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for ts, vid, lat, lon in records:
            writer.writerow([repr(float(ts)), vid, repr(float(lat)), repr(float(lon))])
