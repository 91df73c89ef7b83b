"""Offline LQR synthesis of the distributed synchronization controller.

The N agents are stacked into one augmented system.  Local regulation enters
through the per-agent weights ``Q_i``; synchronization through a pairwise
penalty ``sum_{i<j} (x_i - x_j)^T Q_sync (x_i - x_j)``, which expands to
diagonal blocks ``Q_i + (N-1) Q_sync`` and off-diagonal blocks ``-Q_sync``.
The infinite-horizon gain of the augmented problem is then cut into the
blocks ``F_ii`` (own state) and ``F_ij`` (estimate of agent j).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import block_diag

from .dynamics import LtiModel
from .errors import ConfigurationError, ContractViolation, SynthesisError

DARE_TOL = 1e-10
DARE_MAX_ITER = 10 ** 6


@dataclass(frozen=True)
class CostSpec:
    Q: Sequence[np.ndarray]
    Q_sync: np.ndarray
    R: Sequence[np.ndarray]

    def __post_init__(self):
        Q = tuple(np.atleast_2d(np.asarray(q, dtype=float)) for q in self.Q)
        R = tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in self.R)
        Qs = np.atleast_2d(np.asarray(self.Q_sync, dtype=float))
        if len(Q) != len(R):
            raise ConfigurationError("Q and R must have one entry per agent")
        for name, mat, definite in [("Q_sync", Qs, False)] + [("Q", q, False) for q in Q] + [("R", r, True) for r in R]:
            if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T):
                raise ConfigurationError(f"{name} must be square and symmetric")
            lo = np.linalg.eigvalsh(mat).min()
            if (definite and lo <= 0) or (not definite and lo < -1e-12):
                raise ConfigurationError(f"{name} has wrong definiteness (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q_sync", Qs)

    @property
    def n_agents(self) -> int:
        return len(self.Q)

    @classmethod
    def uniform(cls, n_agents: int, Q, Q_sync, R) -> "CostSpec":
        return cls([Q] * n_agents, Q_sync, [R] * n_agents)


def build_augmented_cost(models: Sequence[LtiModel], cost: CostSpec) -> tuple[np.ndarray, np.ndarray]:
    N = len(models)
    if cost.n_agents != N:
        raise ConfigurationError(f"cost spec covers {cost.n_agents} agents, got {N} models")
    n = models[0].n
    for i, (mod, q, r) in enumerate(zip(models, cost.Q, cost.R)):
        if mod.n != n or q.shape != (n, n) or r.shape != (mod.m, mod.m):
            raise ConfigurationError(f"dimension mismatch for agent {i}")
    if cost.Q_sync.shape != (n, n):
        raise ConfigurationError("Q_sync dimension mismatch")
    Qt = np.kron(-np.ones((N, N)), cost.Q_sync)
    for i in range(N):
        Qt[i * n:(i + 1) * n, i * n:(i + 1) * n] = cost.Q[i] + (N - 1) * cost.Q_sync
    Rt = block_diag(*cost.R)
    return Qt, Rt


def build_augmented_dynamics(models: Sequence[LtiModel]) -> tuple[np.ndarray, np.ndarray]:
    return block_diag(*[m.A for m in models]), block_diag(*[m.B for m in models])


def solve_dare(A, B, Q, R, tol: float = DARE_TOL, max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Stabilizing DARE solution by value iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q``.
    Convergence is declared when the largest element change drops below
    ``tol * max(1, max|P|)``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = Q + A.T @ P @ A - (A.T @ P @ B) @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise SynthesisError("Riccati iteration diverged (system not stabilizable?)")
        change = np.abs(P_next - P).max()
        P = P_next
        if change <= tol * max(1.0, np.abs(P).max()):
            return P
    raise SynthesisError(f"Riccati iteration did not converge within {max_iter} iterations")


def lqr_gain(A, B, Q, R, **kw) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(F, P)`` with the feedback convention ``u = F x``."""
    P = solve_dare(A, B, Q, R, **kw)
    F = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return F, P


@dataclass(frozen=True)
class GainSet:
    """Augmented feedback ``F`` (N*m x N*n) with block accessors."""

    F: np.ndarray
    n_agents: int
    n: int
    m: int

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if F.shape != (self.n_agents * self.m, self.n_agents * self.n):
            raise ConfigurationError(f"gain shape {F.shape} inconsistent with N={self.n_agents}, n={self.n}, m={self.m}")
        object.__setattr__(self, "F", F)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.F[i * self.m:(i + 1) * self.m, j * self.n:(j + 1) * self.n]

    def F_ii(self, i: int) -> np.ndarray:
        return self.block(i, i)

    def omega(self, i: int) -> tuple[int, ...]:
        return tuple(j for j in range(self.n_agents) if j != i and np.any(self.block(i, j) != 0.0))

    def blocks(self) -> np.ndarray:
        """Gains as an array of shape (N, N, m, n)."""
        N, m, n = self.n_agents, self.m, self.n
        return self.F.reshape(N, m, N, n).transpose(0, 2, 1, 3).copy()

    def closed_loop(self, models: Sequence[LtiModel]) -> np.ndarray:
        At, Bt = build_augmented_dynamics(models)
        return At + Bt @ self.F

    def local_closed_loop(self, models: Sequence[LtiModel], i: int) -> np.ndarray:
        return models[i].A + models[i].B @ self.F_ii(i)

    @classmethod
    def zeros(cls, n_agents: int, n: int, m: int) -> "GainSet":
        return cls(np.zeros((n_agents * m, n_agents * n)), n_agents, n, m)


def solve_lqr(models: Sequence[LtiModel], cost: CostSpec, zero_tol: float = 1e-12, **kw) -> GainSet:
    """Synthesize the distributed gains; negligible coupling blocks are set to exactly zero."""
    At, Bt = build_augmented_dynamics(models)
    Qt, Rt = build_augmented_cost(models, cost)
    F, _ = lqr_gain(At, Bt, Qt, Rt, **kw)
    N, n, m = len(models), models[0].n, models[0].m
    scale = np.abs(F).max() if F.size else 0.0
    for i in range(N):
        for j in range(N):
            if i != j:
                blk = F[i * m:(i + 1) * m, j * n:(j + 1) * n]
                if np.abs(blk).max() <= zero_tol * scale:
                    blk[...] = 0.0
    return GainSet(F, N, n, m)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max())


def control_input(i: int, x_i, estimates: Mapping[int, np.ndarray], gains: GainSet) -> np.ndarray:
    """``u_i = F_ii x_i + sum_{j in Omega_i} F_ij xhat_ij``."""
    u = gains.F_ii(i) @ np.asarray(x_i, dtype=float)
    for j in gains.omega(i):
        if j not in estimates:
            raise ContractViolation(f"agent {i} has no estimate of agent {j}")
        u = u + gains.block(i, j) @ np.asarray(estimates[j], dtype=float)
    return u


def save_gains(path, gains: GainSet) -> None:
    header = f"predtrig-gains v1\nn_agents {gains.n_agents} n {gains.n} m {gains.m}"
    np.savetxt(path, gains.F, fmt="%.17g", header=header)


def load_gains(path) -> GainSet:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# predtrig-gains"):
        raise ConfigurationError(f"{path} is not a gains file")
    fields = lines[1].lstrip("# ").split()
    meta = dict(zip(fields[::2], map(int, fields[1::2])))
    F = np.loadtxt(path, ndmin=2)
    return GainSet(F, meta["n_agents"], meta["n"], meta["m"])
