"""The caching assignment problem: feasibility, utility, exact solver, baselines.

An assignment is a binary requester-by-provider matrix. Feasibility demands
that no provider's capacity is exceeded and every requester's total delivery
latency stays within its deadline. Utility is the summed payment-minus-energy
margin of the selected pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ChannelParams,
    Content,
    EconomicParams,
    rate_from_distance,
)

SOLVE_EXACT_MAX_CELLS = 20
_ENUM_CHUNK = 1 << 16


class DimensionError(ValueError):
    """Assignment shape does not match the problem instance."""


class InstanceTooLargeError(ValueError):
    """Exact enumeration refused: more than SOLVE_EXACT_MAX_CELLS cells."""


@dataclass(frozen=True)
class Assignment:
    """Binary caching matrix; x[i, p] == 1 assigns requester i to provider p."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 2:
            raise ValueError(f"assignment must be 2-D, got shape {x.shape}")
        if not np.isin(x, (0, 1)).all():
            raise ValueError("assignment entries must be 0 or 1")
        object.__setattr__(self, "x", x.astype(np.int8))

    @classmethod
    def zeros(cls, n_requesters: int, n_providers: int) -> "Assignment":
        return cls(np.zeros((n_requesters, n_providers), dtype=np.int8))

    @classmethod
    def from_pairs(cls, n_requesters: int, n_providers: int, pairs) -> "Assignment":
        x = np.zeros((n_requesters, n_providers), dtype=np.int8)
        for i, p in pairs:
            x[i, p] = 1
        return cls(x)

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(i), int(p)) for i, p in zip(*np.nonzero(self.x))]

    def assigned_requesters(self) -> np.ndarray:
        return self.x.sum(axis=1) > 0

    def __eq__(self, other):
        return isinstance(other, Assignment) and np.array_equal(self.x, other.x)


@dataclass(frozen=True)
class Violation:
    kind: str        # "capacity" or "latency"
    index: int       # provider index for capacity, requester index for latency
    slack: float     # constraint value minus bound; > 0 when violated

    def __str__(self):
        who = "provider" if self.kind == "capacity" else "requester"
        return f"{self.kind} violation at {who} {self.index} (excess {self.slack:.6g})"


@dataclass(frozen=True)
class CachingProblem:
    """One time slot's assignment instance with precomputed pairwise matrices."""

    contents: tuple[Content, ...]
    requester_positions: np.ndarray   # (I, 2) meters
    capacities: np.ndarray            # (P,) bytes
    provider_positions: np.ndarray    # (P, 2) meters
    chan: ChannelParams
    econ: EconomicParams
    rates: np.ndarray = field(init=False)      # (I, P) bits/s, 0 out of range
    latencies: np.ndarray = field(init=False)  # (I, P) seconds, inf out of range
    energies: np.ndarray = field(init=False)   # (I, P) coins, inf out of range

    def __post_init__(self):
        req = np.asarray(self.requester_positions, dtype=float).reshape(-1, 2)
        prov = np.asarray(self.provider_positions, dtype=float).reshape(-1, 2)
        caps = np.asarray(self.capacities, dtype=float).reshape(-1)
        if len(self.contents) != req.shape[0]:
            raise DimensionError("one content per requester required")
        if caps.shape[0] != prov.shape[0]:
            raise DimensionError("one capacity per provider required")
        object.__setattr__(self, "requester_positions", req)
        object.__setattr__(self, "provider_positions", prov)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "contents", tuple(self.contents))

        d = np.sqrt(((req[:, None, :] - prov[None, :, :]) ** 2).sum(axis=2))
        rates = rate_from_distance(d, self.chan) if d.size else np.zeros_like(d)
        sizes = np.array([c.size_bits for c in self.contents])
        cache = np.array([c.cache_bytes for c in self.contents])
        reachable = rates > 0
        air = np.where(reachable, sizes[:, None] / np.where(reachable, rates, 1.0), np.inf)
        joules = (self.chan.tx_power_mw / 1000.0) * air \
            + self.econ.cache_energy_per_byte * cache[:, None]
        energies = np.where(reachable, self.econ.energy_price * joules, np.inf)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "latencies", air)
        object.__setattr__(self, "energies", energies)

    @property
    def n_requesters(self) -> int:
        return len(self.contents)

    @property
    def n_providers(self) -> int:
        return self.capacities.shape[0]

    @property
    def cache_demands(self) -> np.ndarray:
        return np.array([c.cache_bytes for c in self.contents])

    @property
    def deadlines(self) -> np.ndarray:
        return np.array([c.deadline_s for c in self.contents])

    @property
    def payments(self) -> np.ndarray:
        return self.econ.cache_price * self.cache_demands

    def margins(self) -> np.ndarray:
        """(I, P) per-pair utility contribution; -inf where unreachable."""
        pay = self.payments[:, None]
        return np.where(np.isfinite(self.energies), pay - self.energies, -np.inf)


def _check_dims(p: CachingProblem, a: Assignment):
    if a.x.shape != (p.n_requesters, p.n_providers):
        raise DimensionError(
            f"assignment shape {a.x.shape} != instance shape "
            f"({p.n_requesters}, {p.n_providers})")


def feasible(p: CachingProblem, a: Assignment) -> tuple[bool, list[Violation]]:
    """Check capacity and latency constraints; returns (ok, violations)."""
    _check_dims(p, a)
    x = a.x.astype(bool)
    violations = []
    loads = np.where(x, p.cache_demands[:, None], 0.0).sum(axis=0)
    for j in np.nonzero(loads > p.capacities)[0]:
        violations.append(Violation("capacity", int(j), float(loads[j] - p.capacities[j])))
    lat = np.where(x, p.latencies, 0.0).sum(axis=1)
    for i in np.nonzero(lat > p.deadlines)[0]:
        violations.append(Violation("latency", int(i), float(lat[i] - p.deadlines[i])))
    return not violations, violations


def utility(p: CachingProblem, a: Assignment) -> float:
    """System utility of an assignment, defined whether or not it is feasible."""
    _check_dims(p, a)
    x = a.x.astype(bool)
    if not x.any():
        return 0.0
    margins = p.payments[:, None] - p.energies
    return float(margins[x].sum())


def per_requester_success(p: CachingProblem, a: Assignment) -> np.ndarray:
    """Requesters whose caching completes: assigned, in time, on uncrowded providers."""
    _check_dims(p, a)
    x = a.x.astype(bool)
    loads = np.where(x, p.cache_demands[:, None], 0.0).sum(axis=0)
    provider_ok = loads <= p.capacities
    lat = np.where(x, p.latencies, 0.0).sum(axis=1)
    latency_ok = lat <= p.deadlines
    assigned = x.any(axis=1)
    crowded = (x & ~provider_ok[None, :]).any(axis=1)
    return assigned & latency_ok & ~crowded


def solve_exact(p: CachingProblem) -> tuple[Assignment, float]:
    """Exhaustive maximization of utility over all feasible binary matrices.

    Ties resolve to the lexicographically smallest flattened matrix. Refuses
    instances with more than SOLVE_EXACT_MAX_CELLS cells.
    """
    n_cells = p.n_requesters * p.n_providers
    if n_cells > SOLVE_EXACT_MAX_CELLS:
        raise InstanceTooLargeError(
            f"{n_cells} cells exceed the enumeration bound {SOLVE_EXACT_MAX_CELLS}")
    I, P = p.n_requesters, p.n_providers
    demands = p.cache_demands
    margins = np.where(np.isfinite(p.energies), p.payments[:, None] - p.energies, -np.inf)
    lat = p.latencies

    best_val = 0.0
    best_code = 0
    # bit (n_cells - 1 - j) of the code holds flattened cell j, so ascending
    # codes enumerate flattened matrices in lexicographic order
    shifts = n_cells - 1 - np.arange(n_cells)
    for start in range(0, 1 << n_cells, _ENUM_CHUNK):
        stop = min(start + _ENUM_CHUNK, 1 << n_cells)
        codes = np.arange(start, stop, dtype=np.int64)
        bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(bool)
        x = bits.reshape(-1, I, P)
        loads = np.where(x, demands[None, :, None], 0.0).sum(axis=1)
        cap_ok = (loads <= p.capacities[None, :]).all(axis=1)
        lats = np.where(x, lat[None, :, :], 0.0).sum(axis=2)
        lat_ok = (lats <= p.deadlines[None, :]).all(axis=1)
        ok = cap_ok & lat_ok
        if not ok.any():
            continue
        vals = np.where(x, margins[None, :, :], 0.0).reshape(len(codes), -1).sum(axis=1)
        vals = np.where(ok, vals, -np.inf)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_code = int(codes[k])

    bits = [(best_code >> s) & 1 for s in shifts]
    x = np.array(bits, dtype=np.int8).reshape(I, P)
    return Assignment(x), best_val


def gcc(p: CachingProblem) -> Assignment:
    """Greedy baseline: each requester takes the fastest provider that still fits.

    Requesters are processed in index order; a requester is skipped when no
    in-range provider satisfies both its deadline and the remaining capacity.
    """
    remaining = p.capacities.astype(float).copy()
    x = np.zeros((p.n_requesters, p.n_providers), dtype=np.int8)
    for i in range(p.n_requesters):
        ok = (p.rates[i] > 0) \
            & (p.latencies[i] <= p.contents[i].deadline_s) \
            & (p.contents[i].cache_bytes <= remaining)
        if not ok.any():
            continue
        scores = np.where(ok, p.rates[i], -np.inf)
        j = int(np.argmax(scores))   # first max wins: lowest provider index on ties
        x[i, j] = 1
        remaining[j] -= p.contents[i].cache_bytes
    return Assignment(x)


def rcc(p: CachingProblem, rng: np.random.Generator) -> Assignment:
    """Random baseline: uniform in-range provider, blind to capacity and deadlines."""
    x = np.zeros((p.n_requesters, p.n_providers), dtype=np.int8)
    for i in range(p.n_requesters):
        in_range = np.nonzero(p.rates[i] > 0)[0]
        if in_range.size == 0:
            continue
        j = int(in_range[rng.integers(in_range.size)])
        x[i, j] = 1
    return Assignment(x)


def problem_to_json(p: CachingProblem) -> str:
    """Serialize an instance (parameters and inputs; matrices are derived)."""
    doc = {
        "requesters": [
            {
                "size_bits": c.size_bits,
                "cache_bytes": c.cache_bytes,
                "deadline_s": c.deadline_s,
                "position": list(map(float, pos)),
            }
            for c, pos in zip(p.contents, p.requester_positions)
        ],
        "providers": [
            {"capacity_bytes": float(cap), "position": list(map(float, pos))}
            for cap, pos in zip(p.capacities, p.provider_positions)
        ],
        "channel": {
            "bandwidth_hz": p.chan.bandwidth_hz,
            "tx_power_mw": p.chan.tx_power_mw,
            "noise_mw": p.chan.noise_mw,
            "v2v_range_m": p.chan.v2v_range_m,
            "channel_gain": p.chan.channel_gain,
            "path_loss_exp": p.chan.path_loss_exp,
        },
        "economics": {
            "cache_price": p.econ.cache_price,
            "energy_price": p.econ.energy_price,
            "cache_energy_per_byte": p.econ.cache_energy_per_byte,
            "penalty": p.econ.penalty,
        },
    }
    return json.dumps(doc, indent=2)


def problem_from_json(text: str) -> CachingProblem:
    doc = json.loads(text)
    contents = tuple(
        Content(r["size_bits"], r["cache_bytes"], r["deadline_s"])
        for r in doc["requesters"]
    )
    req_pos = np.array([r["position"] for r in doc["requesters"]], dtype=float)
    caps = np.array([q["capacity_bytes"] for q in doc["providers"]], dtype=float)
    prov_pos = np.array([q["position"] for q in doc["providers"]], dtype=float)
    chan = ChannelParams(**doc["channel"])
    econ = EconomicParams(**doc["economics"])
    return CachingProblem(contents, req_pos, caps, prov_pos, chan, econ)
