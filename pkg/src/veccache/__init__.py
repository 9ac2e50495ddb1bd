"""Vehicular edge content caching with a learning caching agent and a permissioned ledger.

The package is organized as one module per subsystem:

- ``model``      vehicles, contents, radio and economic parameters, per-pair costs
- ``mobility``   Manhattan-grid motion and position-trace replay
- ``caching``    the caching assignment problem, exact solver and baselines
- ``agent``      actor-critic caching agent trained with plain SGD
- ``refine``     rounding continuous actions to binary assignments via matching
- ``ledger``     identities, signed messages, transactions and the block chain
- ``consensus``  utility-scored delegate election and block verification rounds
- ``harness``    scenario configuration, experiment loop, metrics
- ``cli``        command line entry points
"""

from .model import (
    ChannelParams,
    Content,
    EconomicParams,
    Heading,
    Role,
    VehicleState,
    data_rate,
    energy_cost,
    pair_payment,
    tx_latency,
)
from .caching import Assignment, CachingProblem, feasible, gcc, rcc, solve_exact, utility
from .refine import BipartiteGraph, build_graph, max_weight_matching, refine

__all__ = [
    "ChannelParams",
    "Content",
    "EconomicParams",
    "Heading",
    "Role",
    "VehicleState",
    "data_rate",
    "energy_cost",
    "pair_payment",
    "tx_latency",
    "Assignment",
    "CachingProblem",
    "feasible",
    "gcc",
    "rcc",
    "solve_exact",
    "utility",
    "BipartiteGraph",
    "build_graph",
    "max_weight_matching",
    "refine",
]
