"""Round-level model of the many-to-all wireless exchange.

A round moves ``M = M_A + M_C`` equal-size messages.  Slot-level coding and
capture are abstracted away: every (sender, receiver) delivery succeeds
independently with probability ``1 - p_loss`` and each agent ends the round
holding the final priority aggregate with probability ``1 - q_noagg``.
Priorities themselves ride in every packet header and are never lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NetworkConfig:
    n_agents: int
    M_A: int = 18
    M_C: int | None = None
    p_loss: float = 1 / 50_000
    q_noagg: float = 1e-4
    W_P: int = 4
    slot_us: float = 380.0
    us_per_byte: float = 4.0
    slots_per_message: float = 9.5
    round_budget_us: float = 76_000.0
    base_slots: float = 9.5

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigurationError("need at least one agent")
        if self.M_A < 0:
            raise ConfigurationError("M_A must be non-negative")
        if self.M_C is not None and not 1 <= self.M_C:
            raise ConfigurationError("M_C must be at least 1")
        if not 0.0 <= self.p_loss < 1.0:
            raise ConfigurationError("p_loss must lie in [0, 1)")
        if not 0.0 <= self.q_noagg < 1.0:
            raise ConfigurationError("q_noagg must lie in [0, 1)")
        if self.W_P < 1:
            raise ConfigurationError("W_P must be at least 1")
        if self.slot_us <= 0 or self.slots_per_message <= 0 or self.round_budget_us <= 0:
            raise ConfigurationError("slot time, slots per message and round budget must be positive")

    @property
    def M(self) -> int:
        return self.M_A + (self.M_C or 0)


def aggregate_size_full(N: int, W_P: int) -> int:
    """Bytes for all N priorities."""
    return -(-N * W_P // 8)


def aggregate_size_topk(N: int, W_P: int, M_C: int) -> int:
    """Bytes for the M_C top priorities, their ids and one contribution bit per agent."""
    id_bits = math.ceil(math.log2(N)) if N > 1 else 0
    return -(-(M_C * W_P + M_C * id_bits + N) // 8)


def aggregate_size(N: int, W_P: int, M_C: int) -> int:
    if N < 1 or W_P < 1 or not 1 <= M_C <= N:
        raise ConfigurationError(f"invalid aggregate parameters N={N}, W_P={W_P}, M_C={M_C}")
    return min(aggregate_size_full(N, W_P), aggregate_size_topk(N, W_P, M_C))


def slot_time_us(config: NetworkConfig, predictive: bool, M_C: int) -> Fraction:
    slot = Fraction(str(config.slot_us))
    if predictive:
        slot += Fraction(str(config.us_per_byte)) * aggregate_size(config.n_agents, config.W_P, M_C)
    return slot


def round_time_us(config: NetworkConfig, predictive: bool, M_C: int) -> Fraction:
    return (config.M_A + M_C) * Fraction(str(config.slots_per_message)) * slot_time_us(config, predictive, M_C)


def control_bandwidth(config: NetworkConfig, predictive: bool) -> int:
    """Largest M_C (at most N) whose round fits the communication budget.

    In predictive mode the slot grows by the aggregate bytes, which depend on
    M_C, so every candidate is re-checked with its own aggregate size.
    Arithmetic is exact (rational), so boundary cases such as a round that
    fills the budget exactly are decided without rounding error.
    """
    budget = Fraction(str(config.round_budget_us))
    best = 0
    for M_C in range(1, config.n_agents + 1):
        if round_time_us(config, predictive, M_C) <= budget:
            best = M_C
    if best == 0:
        raise ConfigurationError("round budget too small for a single control message")
    return best


@dataclass(frozen=True)
class Aggregate:
    """Final priority aggregate: top-M_C ``(value, id)`` pairs plus contribution bits."""

    top_ids: tuple[int, ...]
    top_values: tuple[int, ...]
    contributed: tuple[bool, ...]

    @property
    def complete(self) -> bool:
        return all(self.contributed)


def rank_order(values: Sequence[int]) -> list[int]:
    """Agent ids sorted by value descending, ties by id ascending."""
    return sorted(range(len(values)), key=lambda i: (-int(values[i]), i))


def priority_exchange(quantized: Sequence[int], M_C: int) -> Aggregate:
    order = rank_order(quantized)[:M_C]
    return Aggregate(tuple(order), tuple(int(quantized[i]) for i in order), (True,) * len(quantized))


@dataclass
class RoundOutcome:
    """Result of one communication round.

    ``delivered[j, i]`` is true when agent j's control message reached agent
    i (the diagonal marks the sender itself).  ``has_aggregate[i]`` tells
    whether agent i ended the round with the final priority aggregate.
    """

    k: int
    schedule: tuple[int, ...]
    kappa: np.ndarray
    delivered: np.ndarray
    skipped: tuple[int, ...]
    unassigned: int
    has_aggregate: np.ndarray
    slots: float

    @property
    def n_used(self) -> int:
        return int(self.kappa.sum())


def draw_round(rng: np.random.Generator, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draws for one round: (N, N) delivery draws and (N,) aggregate draws."""
    u = rng.random((N + 1, N))
    return u[:N], u[N]


def execute_round(config: NetworkConfig, schedule: Sequence[int], skip_marks: Sequence[int],
                  rng: np.random.Generator | None = None, M_C: int | None = None, k: int = 0,
                  draws: tuple[np.ndarray, np.ndarray] | None = None) -> RoundOutcome:
    """Deliver the messages of all scheduled, non-skipped agents.

    Either ``rng`` or pre-drawn uniforms ``draws`` (see :func:`draw_round`)
    supply the randomness.
    """
    N = config.n_agents
    M_C = M_C if M_C is not None else config.M_C
    schedule = tuple(int(i) for i in schedule)
    skipped = tuple(sorted(set(int(i) for i in skip_marks)))
    if M_C is None or len(schedule) > M_C:
        raise ConfigurationError(f"schedule of {len(schedule)} exceeds M_C={M_C}")
    if not set(skipped) <= set(schedule):
        raise ConfigurationError("skip marks must refer to scheduled agents")
    if draws is None:
        draws = draw_round(rng, N)
    u_msg, u_agg = draws
    kappa = np.zeros(N, dtype=bool)
    kappa[[i for i in schedule if i not in skipped]] = True
    delivered = (u_msg >= config.p_loss) & kappa[:, None]
    np.fill_diagonal(delivered, kappa)
    has_aggregate = u_agg >= config.q_noagg
    used = int(kappa.sum())
    slots = config.base_slots + config.slots_per_message * (config.M_A + used)
    return RoundOutcome(k, schedule, kappa, delivered, skipped, M_C - len(schedule), has_aggregate, slots)
