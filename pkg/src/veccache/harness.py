"""Experiment loop: mobility, assignment, rewards, contracts, consensus, metrics.

Each episode draws a fresh fleet (positions, contents, capacities), then steps
it through assignment decisions. Feasible assignments execute caching
contracts whose transactions accumulate in the station mempool; whenever a
block's worth is waiting, the delegate commission runs a verification round.
All randomness derives from named substreams of the scenario seed, so a run
is a pure function of (config, seed).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import caching, consensus as pou, ledger, mobility
from .agent import AgentConfig, DdpgAgent, TrainingSeries, run_training, save_checkpoint
from .caching import Assignment, CachingProblem
from .config import MB, BITS_PER_BYTE, ScenarioConfig
from .model import HEADINGS, Content, Heading, Role, VehicleState

# substream tags for the per-seed random streams
_STREAM_EPISODE = 1
_STREAM_MOBILITY = 2
_STREAM_AGENT = 3
_STREAM_POLICY = 4
_STREAM_CONSENSUS = 5
_STREAM_IDENTITY = 6
_STREAM_TRACE = 7

POLICIES = ("drl", "gcc", "rcc")


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _key_seed(seed: int, kind: int, index: int) -> bytes:
    return _rng(seed, _STREAM_IDENTITY, kind, index).bytes(32)


def _heading_from_delta(dx: float, dy: float, fallback: Heading) -> Heading:
    if dx == 0.0 and dy == 0.0:
        return fallback
    if abs(dx) >= abs(dy):
        return Heading.EAST if dx > 0 else Heading.WEST
    return Heading.NORTH if dy > 0 else Heading.SOUTH


def build_state(problem: CachingProblem, headings, cfg: ScenarioConfig) -> np.ndarray:
    """Flatten rates, latencies, energies, headings, demands and capacities.

    Every component is divided by its configured scale and clipped to [0, 1];
    unreachable pairs (infinite latency or energy) clip to 1.
    """
    s = cfg.scales
    rates = np.clip(problem.rates / s.rate, 0.0, 1.0).ravel()
    lats = np.clip(problem.latencies / s.latency, 0.0, 1.0).ravel()
    energies = np.clip(problem.energies / s.energy, 0.0, 1.0).ravel()
    one_hot = np.zeros((len(headings), 4))
    for k, h in enumerate(headings):
        one_hot[k, HEADINGS.index(h)] = 1.0
    demands = np.stack([
        np.clip(problem.cache_demands / s.cache, 0.0, 1.0),
        np.clip(problem.deadlines / s.deadline, 0.0, 1.0),
    ], axis=1).ravel()
    caps = np.clip(problem.capacities / s.capacity, 0.0, 1.0)
    return np.concatenate([rates, lats, energies, one_hot.ravel(), demands, caps])


@dataclass
class EpisodeWorld:
    """Mutable state of one episode's fleet."""

    vehicles: list[VehicleState]
    walker_rngs: list[np.random.Generator]
    trace_ids: list[str] | None = None
    trace_t0: list[float] | None = None
    step_index: int = 0


class CachingEnv:
    """Environment facade: owns the fleet, the problem matrices and the ledger."""

    def __init__(self, cfg: ScenarioConfig, record_ledger: bool = True):
        self.cfg = cfg
        self.record_ledger = record_ledger
        self.clock = 0.0
        self._episode = -1
        self._world: EpisodeWorld | None = None
        self._problem: CachingProblem | None = None
        self._playback = None
        if cfg.mobility.source == "trace":
            self._playback = mobility.ingest_trace(cfg.mobility.trace_path,
                                                   cfg.mobility.bbox)

        n = cfg.counts.requesters + cfg.counts.providers
        self.ca = ledger.CertificateAuthority(_key_seed(cfg.seed, 0, 0))
        self.identities = [
            self.ca.issue(_key_seed(cfg.seed, 1, k), f"vehicle-{k}-registration".encode())
            for k in range(n)
        ]
        self.bank = ledger.Bank()
        for ident in self.identities:
            self.bank.mint(ident.address, cfg.ledger.initial_balance)

        station_rng = _rng(cfg.seed, _STREAM_CONSENSUS, 0)
        w, h = cfg.mobility.grid.map_extent_m
        self.stations = []
        for m in range(cfg.counts.stations):
            ident = self.ca.issue(_key_seed(cfg.seed, 2, m),
                                  f"station-{m}-registration".encode())
            pos = ((m + 0.5) * w / cfg.counts.stations, h / 2.0)
            compute = float(station_rng.uniform(*cfg.consensus.compute_hz))
            self.stations.append(pou.BaseStation(m, pos, compute, ident))
        self.stations_by_id = {s.station_id: s for s in self.stations}

        self.chain = ledger.Chain()
        self.mempool: list[pou.MempoolEntry] = []
        self.commission: pou.DelegateCommission | None = None
        self._consensus_rng = _rng(cfg.seed, _STREAM_CONSENSUS, 1)
        self._round_index = 0
        self._rounds_since_election = 0
        self._epoch_voters: list[tuple[bytes, float, float]] = []
        self._epoch_deadlines: list[float] = []

        self.reports: list[pou.RoundReport] = []
        self.block_utilities: list[dict[int, float]] = []
        self.success_pct: list[float] = []
        self.contracts_executed = 0
        self._ep_successes = 0
        self._ep_requests = 0
        self._episode_open = False

    # --- episode lifecycle -------------------------------------------------

    @property
    def problem(self) -> CachingProblem:
        return self._problem

    def reset(self, episode: int) -> np.ndarray:
        self._close_episode()
        self._episode = episode
        cfg = self.cfg
        ep_rng = _rng(cfg.seed, _STREAM_EPISODE, episode)
        i, p = cfg.counts.requesters, cfg.counts.providers

        contents = [
            Content(
                size_bits=float(ep_rng.uniform(*cfg.content_size_bits)),
                cache_bytes=float(ep_rng.uniform(*cfg.content_cache_bytes)),
                deadline_s=float(ep_rng.uniform(*cfg.content_deadline_s)),
            )
            for _ in range(i)
        ]
        capacities = [float(ep_rng.uniform(*cfg.capacity_bytes)) for _ in range(p)]
        velocities = [float(ep_rng.uniform(*cfg.mobility.velocity_ms)) for _ in range(i + p)]

        vehicles = []
        trace_ids = None
        trace_t0 = None
        if cfg.mobility.source == "grid":
            grid = cfg.mobility.grid
            for k in range(i + p):
                pos = mobility.random_grid_position(grid, ep_rng)
                heading = mobility.random_heading_for(pos, grid, ep_rng)
                vehicles.append(self._make_vehicle(k, pos, heading, velocities[k],
                                                   contents, capacities))
        else:
            ids = sorted(self._playback.vehicle_ids)
            trace_ids = [ids[k % len(ids)] for k in range(i + p)]
            trace_t0 = []
            horizon = cfg.agent.steps_per_episode * cfg.mobility.step_dt_s
            for k, vid in enumerate(trace_ids):
                t0, t1 = self._playback.time_range(vid)
                slack = max(t1 - t0 - horizon, 0.0)
                start = t0 + float(ep_rng.uniform(0.0, slack)) if slack > 0 else t0
                trace_t0.append(start)
                pos = self._playback.position(vid, start)
                ahead = self._playback.position(vid, start + cfg.mobility.step_dt_s)
                heading = _heading_from_delta(ahead[0] - pos[0], ahead[1] - pos[1],
                                              Heading.NORTH)
                vehicles.append(self._make_vehicle(k, pos, heading, velocities[k],
                                                   contents, capacities))

        walker_rngs = [_rng(cfg.seed, _STREAM_MOBILITY, episode, k) for k in range(i + p)]
        self._world = EpisodeWorld(vehicles, walker_rngs, trace_ids, trace_t0)
        self._rebuild_problem()
        self._episode_open = True
        self._ep_successes = 0
        self._ep_requests = 0
        return build_state(self._problem, [v.heading for v in self._world.vehicles], cfg)

    def _make_vehicle(self, k, pos, heading, velocity, contents, capacities):
        i = self.cfg.counts.requesters
        if k < i:
            return VehicleState(f"v{k}", Role.REQUESTER, pos, heading, velocity,
                                content=contents[k])
        return VehicleState(f"v{k}", Role.PROVIDER, pos, heading, velocity,
                            cache_capacity=capacities[k - i])

    def _close_episode(self):
        if self._episode_open:
            pct = 100.0 * self._ep_successes / max(self._ep_requests, 1)
            self.success_pct.append(pct)
            self._episode_open = False

    def _rebuild_problem(self):
        cfg = self.cfg
        i = cfg.counts.requesters
        vehicles = self._world.vehicles
        req_pos = np.array([v.position for v in vehicles[:i]], dtype=float)
        prov_pos = np.array([v.position for v in vehicles[i:]], dtype=float)
        # coincident points would make the path-loss term singular
        for q in range(prov_pos.shape[0]):
            while np.any(np.all(req_pos == prov_pos[q], axis=1)):
                prov_pos[q] = prov_pos[q] + 0.05
        contents = tuple(v.content for v in vehicles[:i])
        caps = np.array([v.cache_capacity for v in vehicles[i:]], dtype=float)
        self._problem = CachingProblem(contents, req_pos, caps, prov_pos,
                                       cfg.chan, cfg.econ)

    def _advance_mobility(self):
        cfg = self.cfg
        world = self._world
        world.step_index += 1
        dt = cfg.mobility.step_dt_s
        if cfg.mobility.source == "grid":
            grid = cfg.mobility.grid
            world.vehicles = [
                mobility.step(v, grid, dt, world.walker_rngs[k])
                for k, v in enumerate(world.vehicles)
            ]
        else:
            t = world.step_index * dt
            updated = []
            for k, v in enumerate(world.vehicles):
                vid = world.trace_ids[k]
                pos = self._playback.position(vid, world.trace_t0[k] + t)
                heading = _heading_from_delta(pos[0] - v.position[0],
                                              pos[1] - v.position[1], v.heading)
                updated.append(replace(v, position=pos, heading=heading))
            world.vehicles = updated

    # --- one decision step ---------------------------------------------------

    def step(self, assignment: Assignment) -> tuple[float, np.ndarray]:
        problem = self._problem
        ok, _ = caching.feasible(problem, assignment)
        reward = caching.utility(problem, assignment) if ok else self.cfg.econ.penalty
        assigned = int(assignment.x.any(axis=1).sum())
        # a caching attempt succeeds only when the whole slot's contract set
        # executes; an infeasible batch is penalized and nothing is delivered
        self._ep_successes += assigned if ok else 0
        self._ep_requests += problem.n_requesters
        if ok and self.record_ledger:
            self._execute_contracts(assignment)
        self.clock += self.cfg.mobility.step_dt_s
        self._advance_mobility()
        self._rebuild_problem()
        state = build_state(problem=self._problem,
                            headings=[v.heading for v in self._world.vehicles],
                            cfg=self.cfg)
        return reward, state

    def _execute_contracts(self, assignment: Assignment):
        cfg = self.cfg
        problem = self._problem
        i_count = cfg.counts.requesters
        for i, p in assignment.pairs():
            req_ident = self.identities[i]
            prov_ident = self.identities[i_count + p]
            station = min(self.stations,
                          key=lambda s: (math.hypot(
                              s.position[0] - problem.requester_positions[i][0],
                              s.position[1] - problem.requester_positions[i][1]),
                              s.station_id))
            rate = float(problem.rates[i, p])
            prov_pos = tuple(problem.provider_positions[p])
            resp_req = ledger.MatchResponse.create(
                station.identity, "requester", 0.0, prov_pos, rate,
                prov_ident.public_key, self.clock)
            resp_pro = ledger.MatchResponse.create(
                station.identity, "provider", problem.contents[i].cache_bytes,
                prov_pos, rate, req_ident.public_key, self.clock)
            try:
                tx, event = ledger.execute_contract(
                    resp_req, resp_pro, req_ident, prov_ident, self.bank,
                    cfg.econ.cache_price, problem.contents[i].size_bits, self.clock,
                    cfg.ledger.freshness_window_s)
            except ledger.InsufficientBalanceError:
                continue
            self.contracts_executed += 1
            deadline = problem.contents[i].deadline_s
            self.mempool.append(pou.MempoolEntry(tx, deadline, event.latency_s,
                                                 req_ident.public_key))
            self._epoch_voters.append((req_ident.address, tx.coins, event.latency_s))
            self._epoch_deadlines.append(deadline)
            while len(self.mempool) >= cfg.consensus.block_tx_cap:
                before = len(self.mempool)
                self._consensus_round()
                if len(self.mempool) >= before:
                    break   # rejected round; retry next trigger instead of spinning

    # --- consensus -----------------------------------------------------------

    def _draw_round_params(self) -> pou.ConsensusParams:
        cfg = self.cfg.consensus
        r = self._consensus_rng
        return pou.ConsensusParams(
            commission_size=self.cfg.counts.commission,
            wire_rate=cfg.wire_rate,
            collect_delay_s=cfg.collect_delay_s,
            verify_cycles_per_bit=cfg.verify_cycles_per_bit,
            block_bits=float(r.uniform(*cfg.block_bits)),
            result_bits=float(r.uniform(*cfg.result_bits)),
            audit_bits=float(r.uniform(*cfg.audit_bits)),
            block_tx_cap=cfg.block_tx_cap,
        )

    def _maybe_elect(self):
        n_hat = self.cfg.counts.commission
        if self.commission is None or self._rounds_since_election >= n_hat:
            deadline = min(self._epoch_deadlines, default=self.cfg.content_deadline_s[0])
            params = self._draw_round_params()
            votes = pou.cast_votes(self._epoch_voters, self.stations, params, deadline)
            self.commission = pou.elect_commission(votes, self.stations, n_hat)
            self._rounds_since_election = 0
            self._epoch_voters = []
            self._epoch_deadlines = []

    def _consensus_round(self):
        if not self.mempool:
            return
        self._maybe_elect()
        params = self._draw_round_params()
        report = pou.produce_and_verify_round(
            self.commission, self.stations_by_id, self.mempool, self.chain,
            params, self.clock, self._consensus_rng, self._round_index)
        self._round_index += 1
        self._rounds_since_election += 1
        self.clock += report.t_total
        self.reports.append(report)
        if report.accepted:
            self.block_utilities.append(report.utility_per_bs)

    def flush(self):
        """Close the episode accumulator and drain the mempool into final blocks."""
        self._close_episode()
        while self.mempool:
            before = len(self.mempool)
            self._consensus_round()
            if len(self.mempool) >= before:
                break   # a rejected round would spin forever; honest leaders drain


@dataclass
class MetricSeries:
    """Per-episode metrics plus the consensus round reports of one run."""

    episode_rewards: list[float]
    cumulative_average: list[float]
    success_pct: list[float]
    reports: list[pou.RoundReport] = field(default_factory=list)
    block_utilities: list[dict[int, float]] = field(default_factory=list)

    def converged_reward(self, window_frac: float = 0.2) -> float:
        """Mean episode reward over the trailing window of the run."""
        n = len(self.episode_rewards)
        if n == 0:
            return 0.0
        w = max(int(n * window_frac), 1)
        return float(np.mean(self.episode_rewards[-w:]))

    def converged_success(self, window_frac: float = 0.2) -> float:
        n = len(self.success_pct)
        if n == 0:
            return 0.0
        w = max(int(n * window_frac), 1)
        return float(np.mean(self.success_pct[-w:]))

    def to_csv(self) -> str:
        lines = ["episode,reward,cum_avg_reward,success_pct"]
        for k, (r, c, s) in enumerate(zip(self.episode_rewards,
                                          self.cumulative_average, self.success_pct)):
            lines.append(f"{k},{r!r},{c!r},{s!r}")
        return "\n".join(lines) + "\n"

    def consensus_jsonl(self) -> str:
        return "".join(rep.to_json() + "\n" for rep in self.reports)


@dataclass
class ExperimentResult:
    policy: str
    metrics: MetricSeries
    env: CachingEnv
    agent: DdpgAgent | None = None


def run_experiment(cfg: ScenarioConfig, policy: str, out_dir=None,
                   record_ledger: bool = True) -> ExperimentResult:
    """Run one full scenario under a caching policy and collect metrics."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    env = CachingEnv(cfg, record_ledger=record_ledger)
    agent = None
    if policy == "drl":
        agent = DdpgAgent(cfg.state_dim, cfg.action_dim, cfg.agent,
                          _rng(cfg.seed, _STREAM_AGENT))
        series = run_training(env, agent, cfg.agent)
        rewards = series.episode_rewards
        cum = series.cumulative_average
    else:
        policy_rng = _rng(cfg.seed, _STREAM_POLICY)
        tracker = TrainingSeries()
        for episode in range(cfg.agent.episodes):
            env.reset(episode)
            ep_rewards = []
            for _t in range(cfg.agent.steps_per_episode):
                if policy == "gcc":
                    a = caching.gcc(env.problem)
                else:
                    a = caching.rcc(env.problem, policy_rng)
                r, _state = env.step(a)
                ep_rewards.append(r)
            tracker.append(float(np.mean(ep_rewards)) if ep_rewards else 0.0)
        rewards = tracker.episode_rewards
        cum = tracker.cumulative_average
    env.flush()
    metrics = MetricSeries(rewards, cum, env.success_pct, env.reports,
                           env.block_utilities)
    if out_dir is not None:
        write_run_artifacts(out_dir, cfg, policy, metrics, env, agent)
    return ExperimentResult(policy, metrics, env, agent)


def write_run_artifacts(out_dir, cfg: ScenarioConfig, policy: str,
                        metrics: MetricSeries, env: CachingEnv, agent=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics.to_csv())
    with open(os.path.join(out_dir, "consensus.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(metrics.consensus_jsonl())
    with open(os.path.join(out_dir, "chain.bin"), "wb") as fh:
        fh.write(env.chain.dump())
    if agent is not None:
        save_checkpoint(agent, os.path.join(out_dir, "checkpoint.json"))


# --- consensus-only evaluations and sweeps -----------------------------------

def commission_line(spacing_m: float, size: int = 3,
                    compute_hz: float = 7.5e9) -> list[pou.BaseStation]:
    """Equidistant stations for standalone utility evaluation.

    Three stations form an equilateral triangle with the given side; larger
    commissions fall back to a line with the given neighbor spacing.
    """
    from .ledger import CertificateAuthority

    ca = CertificateAuthority(b"\x07" * 32)
    positions = []
    if size == 3:
        h = spacing_m * math.sqrt(3.0) / 2.0
        positions = [(0.0, 0.0), (spacing_m, 0.0), (spacing_m / 2.0, h)]
    else:
        positions = [(k * spacing_m, 0.0) for k in range(size)]
    return [
        pou.BaseStation(k, positions[k], compute_hz,
                        ca.issue(bytes([k + 1]) * 32, f"bs-{k}".encode()))
        for k in range(size)
    ]


def consensus_utility(block_bits: float, *, compute_hz: float = 7.5e9,
                      result_bits: float = 3 * MB * BITS_PER_BYTE,
                      audit_bits: float = 300e3 * BITS_PER_BYTE,
                      collect_delay_s: float = 0.5,
                      deadline_s: float = 7.5,
                      spacing_m: float = 500.0,
                      commission_size: int = 3,
                      wire_rate: float = 6.25e10,
                      content_latency_s: float = 0.0,
                      leader_distance_m: float | None = None) -> float:
    """Leader utility for one parameter point of the verification pipeline."""
    params = pou.ConsensusParams(
        commission_size=commission_size,
        wire_rate=wire_rate,
        collect_delay_s=collect_delay_s,
        verify_cycles_per_bit=150.0,
        block_bits=block_bits,
        result_bits=result_bits,
        audit_bits=audit_bits,
        block_tx_cap=8,
    )
    stations = commission_line(spacing_m, commission_size, compute_hz)
    if leader_distance_m is not None:
        # move the leader away from the verifier cluster along the x axis
        leader = stations[0]
        stations[0] = pou.BaseStation(leader.station_id,
                                      (-leader_distance_m, 0.0),
                                      leader.compute_hz, leader.identity)
    leader = stations[0]
    verifiers = stations[1:]
    t = pou.total_block_time(leader, verifiers, params, content_latency_s)
    return pou.pou_utility(t, deadline_s)


def sweep(cfg: ScenarioConfig, axis: str, values,
          policies=POLICIES) -> tuple[list[str], list[list]]:
    """Run the requested sweep and return (header, rows) for a CSV table."""
    rows: list[list] = []
    if axis == "requesters":
        header = ["requesters", "policy", "converged_reward", "converged_success_pct"]
        for v in values:
            cfg_v = replace(cfg, counts=replace(cfg.counts, requesters=int(v)))
            for policy in policies:
                res = run_experiment(cfg_v, policy, record_ledger=False)
                rows.append([int(v), policy, res.metrics.converged_reward(),
                             res.metrics.converged_success()])
    elif axis == "block_size":
        header = ["block_mb", "utility"]
        for v in values:
            u = consensus_utility(float(v) * MB * BITS_PER_BYTE,
                                  spacing_m=cfg.consensus.station_spacing_m,
                                  wire_rate=cfg.consensus.wire_rate,
                                  collect_delay_s=cfg.consensus.collect_delay_s)
            rows.append([float(v), u])
    elif axis == "leader_distance":
        header = ["distance_m", "utility"]
        mid_block = (cfg.consensus.block_bits[0] + cfg.consensus.block_bits[1]) / 2.0
        for v in values:
            u = consensus_utility(mid_block,
                                  spacing_m=cfg.consensus.station_spacing_m,
                                  wire_rate=cfg.consensus.wire_rate,
                                  collect_delay_s=cfg.consensus.collect_delay_s,
                                  leader_distance_m=float(v))
            rows.append([float(v), u])
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    return header, rows


def sweep_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def generate_synthetic_trace(cfg: ScenarioConfig, out_path, n_vehicles: int,
                             duration_s: float, sample_dt_s: float = 1.0):
    """Drive grid walkers inside the configured bounding box and emit a trace CSV."""
    bbox = cfg.mobility.bbox
    w, h = bbox.extent_m()
    block = cfg.mobility.grid.block_size_m
    w = max(int(w / block), 1) * block
    h = max(int(h / block), 1) * block
    grid = mobility.GridParams(
        intersection_density=cfg.mobility.grid.intersection_density,
        wait_time_s=cfg.mobility.grid.wait_time_s,
        wait_prob=cfg.mobility.grid.wait_prob,
        block_size_m=block,
        map_extent_m=(w, h),
    )
    rng = _rng(cfg.seed, _STREAM_TRACE)
    vehicles = []
    for k in range(n_vehicles):
        pos = mobility.random_grid_position(grid, rng)
        heading = mobility.random_heading_for(pos, grid, rng)
        velocity = float(rng.uniform(*cfg.mobility.velocity_ms))
        vehicles.append(VehicleState(f"t{k}", Role.PROVIDER, pos, heading, velocity,
                                     cache_capacity=1.0))
    walker_rngs = [_rng(cfg.seed, _STREAM_TRACE, 1, k) for k in range(n_vehicles)]

    records = []
    t = 0.0
    n_steps = int(round(duration_s / sample_dt_s))
    for stepno in range(n_steps + 1):
        for k, v in enumerate(vehicles):
            lat, lon = bbox.to_latlon(v.position[0] - w / 2.0, v.position[1] - h / 2.0)
            records.append((t, v.vid, lat, lon))
        if stepno == n_steps:
            break
        vehicles = [mobility.step(v, grid, sample_dt_s, walker_rngs[k])
                    for k, v in enumerate(vehicles)]
        t += sample_dt_s
    mobility.write_trace(out_path, records)
    return records
