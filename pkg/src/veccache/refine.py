"""Rounding continuous caching actions to binary assignments.

The agent emits a fractional intensity per requester-provider pair. Each
provider is split into as many unit-capacity slots as its total incoming
intensity fills, intensities are poured into the slots in requester order
(splitting a requester's mass across a slot boundary when it straddles one),
and a maximum-weight matching on the resulting bipartite graph decides which
pairs become 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .caching import Assignment, CachingProblem

_BOUNDARY_TOL = 1e-9
_MASS_TOL = 1e-12
DEFAULT_ZERO_THRESHOLD = 0.05


@dataclass(frozen=True)
class BipartiteGraph:
    """Weighted bipartite graph between requesters and provider slots.

    ``slots[k] = (provider, slot)`` names right node k; ``edges`` holds
    ``(requester, k, weight)`` triples with weights in [0, 1].
    """

    n_left: int
    n_providers: int
    slots: tuple[tuple[int, int], ...]
    edges: tuple[tuple[int, int, float], ...]

    def slot_count(self, provider: int) -> int:
        return sum(1 for p, _ in self.slots if p == provider)

    def validate(self):
        incident = np.zeros(len(self.slots))
        for i, k, w in self.edges:
            if not (0 <= i < self.n_left and 0 <= k < len(self.slots)):
                raise ValueError(f"edge ({i}, {k}) out of range")
            if not -_BOUNDARY_TOL <= w <= 1.0 + _BOUNDARY_TOL:
                raise ValueError(f"edge weight {w} outside [0, 1]")
            incident[k] += w
        if incident.size and incident.max() > 1.0 + _BOUNDARY_TOL:
            raise ValueError("slot receives more than one unit of intensity")


def build_graph(x_prime: np.ndarray) -> BipartiteGraph:
    """Split each provider into unit slots and pour in intensities in index order.

    Interior requesters keep their full mass on one slot; the requester whose
    cumulative mass crosses a slot boundary is split between the two slots so
    that its outgoing weights always sum to its intensity exactly.
    """
    z = np.asarray(x_prime, dtype=float)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D intensity matrix, got shape {z.shape}")
    if np.any(z < -_BOUNDARY_TOL) or np.any(z > 1.0 + _BOUNDARY_TOL):
        raise ValueError("intensities must lie in [0, 1]")
    z = np.clip(z, 0.0, 1.0)
    n_req, n_prov = z.shape

    slots: list[tuple[int, int]] = []
    edges: list[tuple[int, int, float]] = []
    for p in range(n_prov):
        col = z[:, p]
        active = np.nonzero(col > _MASS_TOL)[0]
        if active.size == 0:
            continue
        total = float(col[active].sum())
        n_slots = max(int(math.ceil(total - _BOUNDARY_TOL)), 1)
        base = len(slots)
        slots.extend((p, s) for s in range(n_slots))
        cum = 0.0
        for i in active:
            lo, hi = cum, cum + float(col[i])
            cum = hi
            s_first = int(math.floor(lo + _BOUNDARY_TOL))
            s_last = min(int(math.ceil(hi - _BOUNDARY_TOL)) - 1, n_slots - 1)
            for s in range(min(s_first, n_slots - 1), s_last + 1):
                left = max(lo, float(s))
                right = min(hi, float(s + 1)) if s < n_slots - 1 else hi
                w = right - left
                if w > _MASS_TOL:
                    edges.append((int(i), base + s, min(w, 1.0)))

    graph = BipartiteGraph(n_req, n_prov, tuple(slots), tuple(edges))
    graph.validate()
    return graph


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost row-perfect assignment for an n x m cost matrix, n <= m.

    Classic potential-based shortest augmenting paths. Column scans take the
    first minimum, so ties lean toward lower column indices. Returns
    ``match_col`` of length m with the row assigned to each column (-1 free).
    """
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m + 1)
    match = np.full(m + 1, -1, dtype=np.int64)   # column m is the virtual root
    for i in range(n):
        match[m] = i
        j0 = m
        minv = np.full(m, np.inf)
        way = np.zeros(m, dtype=np.int64)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            cur = cost[i0] - u[i0] - v[:m]
            better = (cur < minv) & ~used[:m]
            minv = np.where(better, cur, minv)
            way = np.where(better, j0, way)
            masked = np.where(used[:m], np.inf, minv)
            j1 = int(np.argmin(masked))
            delta = float(masked[j1])
            rows = match[: m + 1][used]
            u[rows] += delta
            v[used] -= delta
            minv = np.where(used[:m], minv, minv - delta)
            j0 = j1
            if match[j0] == -1:
                break
        while j0 != m:
            j1 = int(way[j0])
            match[j0] = match[j1]
            j0 = j1
    return match[:m]


def max_weight_matching(g: BipartiteGraph) -> list[tuple[int, tuple[int, int], float]]:
    """Maximum total-weight matching of the slot graph.

    Every requester additionally gets a private zero-weight escape column, so
    staying unmatched is always available and the matching never sacrifices
    total weight to raise cardinality. Deterministic: equal-weight alternatives
    resolve by requester order and then by (provider, slot) order.
    """
    n, k = g.n_left, len(g.slots)
    if n == 0 or k == 0:
        return []
    cost = np.full((n, k + n), np.inf)
    weight = np.zeros((n, k))
    for i, s, w in g.edges:
        cost[i, s] = -w
        weight[i, s] = w
    cost[np.arange(n), k + np.arange(n)] = 0.0   # private escape columns

    match_col = _hungarian_min(cost)
    result = []
    for s in range(k):
        i = int(match_col[s])
        if i >= 0 and np.isfinite(cost[i, s]):
            result.append((i, g.slots[s], float(weight[i, s])))
    result.sort(key=lambda e: (e[0], e[1]))
    return result


def refine(z: np.ndarray, problem: CachingProblem,
           zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> Assignment:
    """Round a continuous action to a binary assignment via slot matching.

    Intensities at or below ``zero_threshold`` are treated as zero; the
    squashed actor output never reaches 0 exactly, so without a cutoff the
    agent could not express leaving a pair unassigned.
    """
    z = np.asarray(z, dtype=float)
    expected = (problem.n_requesters, problem.n_providers)
    if z.ndim == 1:
        if z.size != expected[0] * expected[1]:
            raise ValueError(f"action length {z.size} != {expected[0] * expected[1]}")
        z = z.reshape(expected)
    elif z.shape != expected:
        raise ValueError(f"action shape {z.shape} != {expected}")
    z = np.where(z > zero_threshold, z, 0.0)
    graph = build_graph(z)
    x = np.zeros(expected, dtype=np.int8)
    for i, (p, _s), _w in max_weight_matching(graph):
        x[i, p] = 1
    return Assignment(x)
