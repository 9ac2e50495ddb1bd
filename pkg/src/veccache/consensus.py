"""Proof-of-Utility consensus over a simulated wired base-station network.

Base stations are scored by how fast they can produce and verify a block
(utility falls exponentially toward zero as the block time approaches the
tightest content deadline in the block). Vehicles vote for the best-scoring
station, weighting votes by their caching fees; the top stations form a
delegate commission that rotates leadership round-robin and runs a
broadcast / cross-verification / confirm protocol per block. Wired links are
modeled as distance-proportional delay at a configured rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ledger import Block, Chain, ChainIntegrityError, Identity, Transaction, verify


class CommissionError(ValueError):
    pass


@dataclass(frozen=True)
class BaseStation:
    """An edge station that can serve as block producer or verifier."""

    station_id: int
    position: tuple[float, float]
    compute_hz: float
    identity: Identity

    def __post_init__(self):
        if self.compute_hz <= 0:
            raise ValueError("compute_hz must be > 0")


@dataclass(frozen=True)
class ConsensusParams:
    """Sizes, rates and the commission shape for one block round."""

    commission_size: int          # odd, between 3 and the station count
    wire_rate: float              # bit-meters per second of wired transfer
    collect_delay_s: float        # transaction collection plus hashing time
    verify_cycles_per_bit: float
    block_bits: float
    result_bits: float            # local verification result size
    audit_bits: float             # second-audit result size
    block_tx_cap: int             # max transactions batched into one block

    def __post_init__(self):
        if self.commission_size < 3 or self.commission_size % 2 == 0:
            raise ValueError("commission_size must be an odd integer >= 3")
        for name in ("wire_rate", "verify_cycles_per_bit", "block_bits",
                     "result_bits", "audit_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.collect_delay_s < 0:
            raise ValueError("collect_delay_s must be >= 0")
        if self.block_tx_cap < 1:
            raise ValueError("block_tx_cap must be >= 1")


def _distance(a: BaseStation, b: BaseStation) -> float:
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])


def block_broadcast_delay(leader: BaseStation, verifiers,
                          params: ConsensusParams) -> float:
    """Slowest leader-to-verifier block transfer."""
    if not verifiers:
        raise ValueError("at least one verifier required")
    return max(params.block_bits * _distance(leader, v) / params.wire_rate
               for v in verifiers)


def cross_verification_delay(verifiers, params: ConsensusParams) -> float:
    """Worst chain of local verify, result exchange and second audit."""
    verifiers = list(verifiers)
    if len(verifiers) < 2:
        raise ValueError("cross verification needs at least two verifiers")
    worst = 0.0
    for a in verifiers:
        for b in verifiers:
            if a.station_id == b.station_id:
                continue
            t = (params.block_bits * params.verify_cycles_per_bit / a.compute_hz
                 + params.result_bits * _distance(a, b) / params.wire_rate
                 + params.result_bits * params.verify_cycles_per_bit / b.compute_hz)
            worst = max(worst, t)
    return worst


def block_confirm_delay(leader: BaseStation, verifiers,
                        params: ConsensusParams) -> float:
    """Slowest second-audit result transfer back to the leader."""
    if not verifiers:
        raise ValueError("at least one verifier required")
    return max(params.audit_bits * _distance(leader, v) / params.wire_rate
               for v in verifiers)


def verification_delay(leader: BaseStation, verifiers,
                       params: ConsensusParams) -> float:
    """Broadcast plus cross-verification plus confirm."""
    return (block_broadcast_delay(leader, verifiers, params)
            + cross_verification_delay(verifiers, params)
            + block_confirm_delay(leader, verifiers, params))


def total_block_time(leader: BaseStation, verifiers, params: ConsensusParams,
                     content_latency_s: float) -> float:
    """Collection and hashing, verification protocol, and content delivery."""
    return (params.collect_delay_s
            + verification_delay(leader, verifiers, params)
            + content_latency_s)


def pou_utility(block_time_s: float, deadline_s: float) -> float:
    """Exponential utility of a block time against the tightest deadline, floored at 0."""
    if deadline_s <= 0:
        raise ValueError(f"deadline must be > 0, got {deadline_s}")
    return max(math.exp(1.0 - block_time_s / deadline_s) - 1.0, 0.0)


def candidate_verifiers(candidate: BaseStation, stations,
                        commission_size: int) -> list[BaseStation]:
    """Verifier set used to score a candidate leader: its nearest peers."""
    others = [s for s in stations if s.station_id != candidate.station_id]
    others.sort(key=lambda s: (_distance(candidate, s), s.station_id))
    return others[: commission_size - 1]


def station_utilities(stations, params: ConsensusParams, content_latency_s: float,
                      deadline_s: float) -> dict[int, float]:
    """Utility of every station as a would-be leader with its nearest peers."""
    out = {}
    for m in stations:
        verifiers = candidate_verifiers(m, stations, params.commission_size)
        if not verifiers or len(verifiers) < 2:
            raise CommissionError("need at least three stations to score utilities")
        t = total_block_time(m, verifiers, params, content_latency_s)
        out[m.station_id] = pou_utility(t, deadline_s)
    return out


@dataclass(frozen=True)
class Vote:
    voter: bytes          # wallet address
    candidate: int        # station id
    weight: float         # the voter's caching transaction fee

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("vote weight must be >= 0")


def cast_votes(voters, stations, params: ConsensusParams,
               deadline_s: float) -> list[Vote]:
    """Each voter backs its highest-utility station, weighted by its fee.

    ``voters`` supplies (wallet_address, fee, content_latency_s) per vehicle
    that completed a caching transaction this epoch. Utility ties resolve to
    the lowest station id.
    """
    votes = []
    for address, fee, latency in voters:
        utilities = station_utilities(stations, params, latency, deadline_s)
        best = min(utilities, key=lambda sid: (-utilities[sid], sid))
        votes.append(Vote(address, best, fee))
    return votes


@dataclass
class DelegateCommission:
    """Elected stations, strongest vote first, with a rotating leader cursor."""

    delegates: list[int]
    cursor: int = 0
    rotations: int = 0

    def __post_init__(self):
        if len(set(self.delegates)) != len(self.delegates):
            raise CommissionError("delegate ids must be distinct")
        if not 0 <= self.cursor < len(self.delegates):
            raise CommissionError("cursor out of range")

    @property
    def size(self) -> int:
        return len(self.delegates)

    def leader_id(self) -> int:
        return self.delegates[self.cursor]

    def advance(self, rng: np.random.Generator):
        """Move leadership to the next delegate; reshuffle after a full rotation."""
        self.cursor += 1
        if self.cursor >= len(self.delegates):
            self.cursor = 0
            self.rotations += 1
            order = list(self.delegates)
            rng.shuffle(order)
            self.delegates = order


def elect_commission(votes, stations, commission_size: int) -> DelegateCommission:
    """Top stations by total vote weight; ties favor the lower station id."""
    ids = sorted(s.station_id for s in stations)
    if len(ids) < commission_size:
        raise CommissionError(
            f"{len(ids)} stations cannot seat a commission of {commission_size}")
    weights = {sid: 0.0 for sid in ids}
    for vote in votes:
        if vote.candidate not in weights:
            raise CommissionError(f"vote for unknown station {vote.candidate}")
        weights[vote.candidate] += vote.weight
    ranked = sorted(ids, key=lambda sid: (-weights[sid], sid))
    return DelegateCommission(ranked[:commission_size])


@dataclass(frozen=True)
class MempoolEntry:
    """A verified transaction waiting for a block, with its caching context."""

    tx: Transaction
    deadline_s: float
    content_latency_s: float
    payer_key: bytes


@dataclass(frozen=True)
class BroadcastMessage:
    """Leader-to-verifier block announcement."""

    kind: str
    leader_key: bytes
    verifier_key: bytes
    ts: float
    block_bytes: bytes
    signature: bytes

    @classmethod
    def create(cls, leader: Identity, verifier_key: bytes, ts: float,
               block_bytes: bytes) -> "BroadcastMessage":
        sig = leader.sign(block_bytes)
        return cls("bro", leader.public_key, verifier_key, ts, block_bytes, sig)


@dataclass(frozen=True)
class ConfirmMessage:
    """Verifier-to-leader audit summary."""

    kind: str
    verifier_key: bytes
    leader_key: bytes
    audit_self: bool
    audit_received: tuple[bool, ...]
    comparison: bool


@dataclass(frozen=True)
class FaultSchedule:
    """Declarative fault injection: failed leader turns and lying verifiers."""

    leader_faults: frozenset[int] = frozenset()
    verifier_faults: dict[int, frozenset[int]] = field(default_factory=dict)

    def leader_fails(self, round_index: int) -> bool:
        return round_index in self.leader_faults

    def faulty_verifiers(self, round_index: int) -> frozenset[int]:
        return self.verifier_faults.get(round_index, frozenset())


@dataclass
class RoundReport:
    round: int
    leader: int
    agree_count: int
    accepted: bool
    skipped: bool
    t_broadcast: float
    t_cross: float
    t_confirm: float
    t_total: float
    utility_per_bs: dict[int, float]

    def to_json(self) -> str:
        doc = {
            "round": self.round,
            "leader": self.leader,
            "agree_count": self.agree_count,
            "accepted": self.accepted,
            "skipped": self.skipped,
            "T_bb": self.t_broadcast,
            "T_cv": self.t_cross,
            "T_bc": self.t_confirm,
            "T_total": self.t_total,
            "utility_per_bs": {str(k): v for k, v in sorted(self.utility_per_bs.items())},
        }
        return json.dumps(doc, sort_keys=True)


def quorum_reached(agree_count: int, commission_size: int) -> bool:
    """Strictly more than two thirds of the verifiers must agree.

    Integer arithmetic: 4 of 6 is exactly two thirds and must not pass.
    """
    return 3 * agree_count > 2 * (commission_size - 1)


def _audit_block(block_bytes: bytes, message: BroadcastMessage, chain: Chain,
                 payer_keys: dict[bytes, bytes]) -> bool:
    """An honest verifier's full audit of a broadcast block."""
    if not verify(message.leader_key, block_bytes, message.signature):
        return False
    try:
        block = Block.from_bytes(block_bytes)
    except Exception:
        return False
    if block.prev_hash != chain.head_hash or block.index != chain.next_index:
        return False
    if not block.verify_integrity():
        return False
    if block.producer_key != message.leader_key:
        return False
    for tx in block.transactions:
        key = payer_keys.get(tx.payer)
        if key is None or not tx.verify(key):
            return False
        if chain.seen(tx.signature):
            return False
    return True


def produce_and_verify_round(commission: DelegateCommission,
                             stations_by_id: dict[int, BaseStation],
                             mempool: list[MempoolEntry],
                             chain: Chain,
                             params: ConsensusParams,
                             now: float,
                             rng: np.random.Generator,
                             round_index: int,
                             faults: FaultSchedule = FaultSchedule(),
                             tamper=None) -> RoundReport:
    """Run one leadership turn: build, broadcast, cross-verify, confirm.

    Accepted blocks leave the mempool and join the chain; a failed or
    outvoted leader leaves every transaction in place for the next turn.
    ``tamper`` optionally rewrites the broadcast bytes (test hook for
    adversarial leaders). The simulated clock cost of the round is reported,
    not applied; the caller owns the clock.
    """
    leader_station = stations_by_id[commission.leader_id()]
    verifier_ids = [d for d in commission.delegates if d != leader_station.station_id]
    verifiers = [stations_by_id[v] for v in verifier_ids]
    batch = mempool[: params.block_tx_cap]

    t_bb = block_broadcast_delay(leader_station, verifiers, params)
    t_cv = cross_verification_delay(verifiers, params)
    t_bc = block_confirm_delay(leader_station, verifiers, params)
    content_latency = max((e.content_latency_s for e in batch), default=0.0)
    t_total = params.collect_delay_s + t_bb + t_cv + t_bc + content_latency
    deadline = min((e.deadline_s for e in batch), default=None)
    if deadline is not None:
        utilities = {
            m.station_id: pou_utility(
                total_block_time(m, candidate_verifiers(m, stations_by_id.values(),
                                                        params.commission_size),
                                 params, content_latency),
                deadline)
            for m in stations_by_id.values()
        }
    else:
        utilities = {m: 0.0 for m in stations_by_id}

    if faults.leader_fails(round_index) or not batch:
        report = RoundReport(round_index, leader_station.station_id, 0, False,
                             True, t_bb, t_cv, t_bc, t_total, utilities)
        commission.advance(rng)
        return report

    block = Block.create(chain.next_index, chain.head_hash, now,
                         [e.tx for e in batch], leader_station.identity)
    payer_keys = {e.tx.payer: e.payer_key for e in batch}
    raw = block.to_bytes()

    faulty = faults.faulty_verifiers(round_index)
    confirms = []
    audit_results = {}
    for v in verifiers:
        sent = raw if tamper is None else tamper(v.station_id, raw)
        message = BroadcastMessage.create(leader_station.identity, v.identity.public_key,
                                          now, sent)
        honest_result = _audit_block(sent, message, chain, payer_keys)
        audit_results[v.station_id] = (honest_result and v.station_id not in faulty)
    for v in verifiers:
        received = tuple(audit_results[w.station_id] for w in verifiers
                         if w.station_id != v.station_id)
        confirms.append(ConfirmMessage("con", v.identity.public_key,
                                       leader_station.identity.public_key,
                                       audit_results[v.station_id], received,
                                       all(received) == audit_results[v.station_id]))

    agree_count = sum(1 for c in confirms if c.audit_self)
    accepted = quorum_reached(agree_count, commission.size)
    if accepted:
        try:
            chain.append_block(block)
        except ChainIntegrityError:
            accepted = False
    if accepted:
        del mempool[: len(batch)]

    report = RoundReport(round_index, leader_station.station_id, agree_count,
                         accepted, False, t_bb, t_cv, t_bc, t_total, utilities)
    commission.advance(rng)
    return report
