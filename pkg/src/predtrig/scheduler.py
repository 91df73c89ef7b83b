"""Distributed schedule computation from the final priority aggregate.

Every agent that holds the complete aggregate runs the same deterministic
rule, so all of them agree on the schedule without further messages.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractViolation
from .netsim import Aggregate


@dataclass(frozen=True)
class Schedule:
    k: int
    granted: tuple[int, ...]
    # agents in the top-M_C set that did not clear the threshold
    below_threshold: tuple[int, ...] = ()

    def __contains__(self, agent: int) -> bool:
        return agent in self.granted


def compute_schedule(aggregate: Aggregate, M_C: int, P_delta_q: int, k: int = 0) -> Schedule:
    """Grant the top-M_C agents whose quantized priority is strictly above ``P_delta_q``.

    The aggregate already lists its entries by value descending with ties
    broken by ascending id.
    """
    if not aggregate.complete:
        raise ContractViolation("cannot compute a schedule from an incomplete aggregate")
    pairs = list(zip(aggregate.top_ids, aggregate.top_values))[:M_C]
    granted = tuple(i for i, v in pairs if v > P_delta_q)
    below = tuple(i for i, v in pairs if v <= P_delta_q)
    return Schedule(k, granted, below)


@dataclass(frozen=True)
class TransmitDecision:
    kappa: bool
    skip_mark: bool


def apply_schedule(agent: int, schedule: Schedule, has_final_aggregate: bool, P0_check: int,
                   P_delta_q: int) -> TransmitDecision:
    """Transmit iff the agent holds the aggregate, is granted, and its instantaneous priority is above the threshold.

    A granted agent that skips (low instantaneous priority or missing
    aggregate) leaves its slot unused; only the low-priority case is an
    explicit skip mark.
    """
    if agent not in schedule:
        return TransmitDecision(False, False)
    if not has_final_aggregate:
        return TransmitDecision(False, False)
    if P0_check <= P_delta_q:
        return TransmitDecision(False, True)
    return TransmitDecision(True, False)
