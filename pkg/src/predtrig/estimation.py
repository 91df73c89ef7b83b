"""Model-propagation estimators for remote agent states.

Every agent ``i`` keeps an estimate ``xhat_ij`` of each agent ``j`` (itself
included).  A message sent in round ``k`` carries ``x_j(k-1)``; on reception
the receiver predicts one step ahead, otherwise it propagates its previous
estimate.  Either way agent ``j``'s input is reconstructed from the
receiver's own previous-round estimates of ``j``'s neighbours:

    base      = x_j(k-1)          if kappa_j(k) * phi_ij(k) == 1
              = xhat_ij(k-1)      otherwise
    xhat_ij(k) = (A_j + B_j F_jj) base + B_j sum_l F_jl xhat_il(k-1)

The owner's own entry uses ``phi = 1`` whenever it transmitted, so it always
matches what a loss-free receiver computes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import GainSet
from .dynamics import LtiModel
from .errors import ContractViolation, SequencingError


@dataclass(frozen=True)
class EstimatorDynamics:
    """Precomputed matrices shared by all banks of a scenario."""

    A_cl: np.ndarray      # (N, n, n): A_j + B_j F_jj
    coupling: np.ndarray  # (N*n, N*n): block (j, l) = B_j F_jl, zero on the diagonal

    @classmethod
    def build(cls, models: Sequence[LtiModel], gains: GainSet) -> "EstimatorDynamics":
        N, n = gains.n_agents, gains.n
        A_cl = np.stack([gains.local_closed_loop(models, j) for j in range(N)])
        G = np.zeros((N * n, N * n))
        for j in range(N):
            for l in gains.omega(j):
                G[j * n:(j + 1) * n, l * n:(l + 1) * n] = models[j].B @ gains.block(j, l)
        return cls(A_cl, G)

    @property
    def n_agents(self) -> int:
        return self.A_cl.shape[0]

    @property
    def n(self) -> int:
        return self.A_cl.shape[1]


def propagate_banks(estimates: np.ndarray, delivered: np.ndarray, payload: np.ndarray,
                    dyn: EstimatorDynamics, owners: Sequence[int] | None = None) -> np.ndarray:
    """One estimator step for a stack of banks.

    ``estimates`` has shape (n_banks, N, n) and holds the previous-round
    estimates; ``delivered[j, i]`` is true when agent j's message reached
    owner i this round; ``payload`` (N, n) holds the transmitted states.
    ``owners`` maps bank rows to owner ids (defaults to ``range(N)``).
    """
    n_banks, N, n = estimates.shape
    owners = np.arange(n_banks) if owners is None else np.asarray(owners)
    got = np.asarray(delivered, dtype=bool)[:, owners].T  # (n_banks, N)
    base = np.where(got[:, :, None], payload[None, :, :], estimates)
    own = np.einsum("jab,ijb->ija", dyn.A_cl, base)
    coupled = (estimates.reshape(n_banks, N * n) @ dyn.coupling.T).reshape(n_banks, N, n)
    return own + coupled


@dataclass(frozen=True)
class RoundObservation:
    """What one owner learns in round ``k``.

    ``kappa[j]`` is 1 when agent j transmitted, ``phi[j]`` is 1 when that
    message reached the owner, and ``payload[j]`` is ``x_j(k-1)`` (only read
    where ``kappa * phi == 1``).
    """

    k: int
    kappa: np.ndarray
    phi: np.ndarray
    payload: np.ndarray


@dataclass
class EstimatorBank:
    owner: int
    estimates: np.ndarray  # (N, n)
    k: int = 0
    dyn: EstimatorDynamics | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, owner: int, x0: np.ndarray, dyn: EstimatorDynamics, k: int = 0) -> "EstimatorBank":
        """Start with estimates equal to the known initial states ``x0`` (N, n)."""
        return cls(owner, np.array(x0, dtype=float), k, dyn)

    def update(self, obs: RoundObservation) -> "EstimatorBank":
        if obs.k != self.k + 1:
            raise SequencingError(f"bank of agent {self.owner} is at round {self.k}, got observation for {obs.k}")
        kappa = np.asarray(obs.kappa, dtype=bool)
        phi = np.asarray(obs.phi, dtype=bool).copy()
        phi[self.owner] = True  # own transmissions count as received
        N = kappa.size
        delivered = np.zeros((N, N), dtype=bool)
        delivered[:, self.owner] = kappa & phi
        new = propagate_banks(self.estimates[None], delivered, np.asarray(obs.payload, dtype=float),
                              self.dyn, owners=[self.owner])[0]
        return EstimatorBank(self.owner, new, obs.k, self.dyn)

    def estimate(self, j: int) -> np.ndarray:
        if not 0 <= j < self.estimates.shape[0]:
            raise ContractViolation(f"bank of agent {self.owner} has no estimate of agent {j}")
        return self.estimates[j]

    def as_mapping(self) -> dict[int, np.ndarray]:
        return {j: self.estimates[j] for j in range(self.estimates.shape[0])}

    def self_error(self, x_i) -> np.ndarray:
        return self_error(self, x_i)


def self_error(bank: EstimatorBank, x_i) -> np.ndarray:
    """``e_i = x_i - xhat_ii`` for the bank owner."""
    return np.asarray(x_i, dtype=float) - bank.estimates[bank.owner]
