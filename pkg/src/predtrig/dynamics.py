"""Stochastic LTI agent models stepped once per communication round.

Each agent evolves as ``x(k+1) = A x(k) + B u(k) + v(k)`` with zero-mean
Gaussian process noise ``v``.  Noise is never drawn inside :func:`step`; it is
produced by :class:`NoiseStreams` (one RNG stream per agent) and injected, so a
trajectory is fully determined by the scenario seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError

# State ordering used for every cart-pole model in the package.
CART_POS, POLE_ANGLE, CART_VEL, POLE_RATE = 0, 1, 2, 3
STATE_LABELS = ("s", "theta", "s_dot", "theta_dot")

_PSD_TOL = 1e-12


def _check_psd(name: str, mat: np.ndarray) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(mat).max())):
        raise ConfigurationError(f"{name} must be symmetric")
    eig = np.linalg.eigvalsh(mat)
    if eig.size and eig.min() < -_PSD_TOL * max(1.0, np.abs(eig).max()):
        raise ConfigurationError(f"{name} must be positive semidefinite (min eigenvalue {eig.min():.3e})")


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time model ``(A, B, sigma_v)`` sampled every ``dt`` seconds."""

    A: np.ndarray
    B: np.ndarray
    sigma_v: np.ndarray
    dt: float = 0.1

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        S = np.atleast_2d(np.asarray(self.sigma_v, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ConfigurationError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if S.shape != A.shape:
            raise ConfigurationError(f"sigma_v shape {S.shape} does not match A {A.shape}")
        _check_psd("sigma_v", S)
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_v", S)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_noise(self, sigma_v) -> "LtiModel":
        return LtiModel(self.A, self.B, sigma_v, self.dt)


@dataclass
class AgentState:
    x: np.ndarray
    k: int = 0
    agent_id: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)


@dataclass(frozen=True)
class DisturbanceSpec:
    """Hold one state component of one agent at a fixed value.

    The hold is active for time indices ``start_step <= k < end_step``.
    Components listed in ``zero_components`` (the matching velocity) are
    forced to zero over the same window.
    """

    agent_id: int
    start_step: int
    end_step: int
    component: int
    value: float
    zero_components: tuple[int, ...] = ()

    def __post_init__(self):
        if self.start_step >= self.end_step:
            raise ConfigurationError("disturbance start_step must precede end_step")
        object.__setattr__(self, "zero_components", tuple(int(c) for c in self.zero_components))

    def active(self, k: int) -> bool:
        return self.start_step <= k < self.end_step

    def validate(self, n: int, n_agents: int | None = None) -> None:
        for c in (self.component, *self.zero_components):
            if not 0 <= c < n:
                raise ConfigurationError(f"disturbance component {c} out of range for n={n}")
        if n_agents is not None and not 0 <= self.agent_id < n_agents:
            raise ConfigurationError(f"disturbance agent {self.agent_id} out of range")


def apply_holds(X: np.ndarray, k: int, specs: Iterable[DisturbanceSpec]) -> np.ndarray:
    """Overwrite held components in the stacked state array ``X`` (agents x n) in place."""
    for spec in specs:
        if spec.active(k):
            X[spec.agent_id, spec.component] = spec.value
            for c in spec.zero_components:
                X[spec.agent_id, c] = 0.0
    return X


def step(model: LtiModel, state: AgentState, u, noise,
         disturbances: Sequence[DisturbanceSpec] = ()) -> AgentState:
    x = np.asarray(state.x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.atleast_1d(np.asarray(noise, dtype=float))
    if x.shape != (model.n,) or u.shape != (model.m,) or w.shape != (model.n,):
        raise ConfigurationError(
            f"dimension mismatch: x{x.shape} u{u.shape} noise{w.shape} for n={model.n}, m={model.m}")
    x_next = model.A @ x + model.B @ u + w
    k_next = state.k + 1
    for d in disturbances:
        if d.agent_id == state.agent_id and d.active(k_next):
            x_next[d.component] = d.value
            x_next[list(d.zero_components)] = 0.0
    return AgentState(x_next, k_next, state.agent_id)


@dataclass(frozen=True)
class CartPoleParams:
    """Linearized cart-pole with a DC-motor-driven cart.

    ``cart_mass`` and ``pole_mass`` in kg, ``half_length`` in m (pivot to pole
    centre of mass), ``damping`` is the equivalent viscous friction on the cart
    in N s/m and ``force_per_volt`` maps the motor voltage to cart force.
    """

    cart_mass: float = 0.94
    pole_mass: float = 0.23
    half_length: float = 0.3302
    damping: float = 5.4
    force_per_volt: float = 1.7
    gravity: float = 9.81

    def validate(self) -> None:
        for name in ("cart_mass", "pole_mass", "half_length", "force_per_volt", "gravity"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"cart-pole parameter {name} must be positive")
        if self.damping < 0:
            raise ConfigurationError("cart-pole damping must be non-negative")


def cartpole_continuous(params: CartPoleParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time (A, B) about the upright equilibrium, state (s, theta, s_dot, theta_dot)."""
    params.validate()
    M, m, l, b, g = params.cart_mass, params.pole_mass, params.half_length, params.damping, params.gravity
    inertia = m * l ** 2 / 3.0  # uniform rod about its centre
    j = inertia + m * l ** 2
    den = inertia * (M + m) + M * m * l ** 2
    A = np.zeros((4, 4))
    A[CART_POS, CART_VEL] = 1.0
    A[POLE_ANGLE, POLE_RATE] = 1.0
    A[CART_VEL, POLE_ANGLE] = -(m * l) ** 2 * g / den
    A[CART_VEL, CART_VEL] = -j * b / den
    A[POLE_RATE, POLE_ANGLE] = m * g * l * (M + m) / den
    A[POLE_RATE, CART_VEL] = m * l * b / den
    B = np.zeros((4, 1))
    B[CART_VEL, 0] = j / den * params.force_per_volt
    B[POLE_RATE, 0] = -m * l / den * params.force_per_volt
    return A, B


def zoh(Ac: np.ndarray, Bc: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    n, m = Bc.shape
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = Ac
    blk[:n, n:] = Bc
    E = expm(blk * dt)
    return E[:n, :n], E[:n, n:]


def make_cartpole_model(params: CartPoleParams | None = None, dt: float = 0.1,
                        sigma_v=None) -> LtiModel:
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    params = params or CartPoleParams()
    A, B = zoh(*cartpole_continuous(params), dt)
    if sigma_v is None:
        sigma_v = np.zeros((4, 4))
    return LtiModel(A, B, sigma_v, dt)


def noise_factor(sigma_v) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == sigma_v``; tolerates singular covariances."""
    S = np.atleast_2d(np.asarray(sigma_v, dtype=float))
    _check_psd("sigma_v", S)
    lam, vec = np.linalg.eigh(S)
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def sample_noise(rng: np.random.Generator, sigma_v) -> np.ndarray:
    L = noise_factor(sigma_v)
    return L @ rng.standard_normal(L.shape[0])


@dataclass
class NoiseStreams:
    """Independent per-agent process-noise streams derived from one seed.

    Stream ``i`` depends only on ``(seed, i)``, so draws for one agent do not
    shift when agents are added, and a shorter run sees a prefix of the noise
    of a longer one.
    """

    seed: int
    factors: Sequence[np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    @staticmethod
    def generator(seed: int, *key: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))

    def draw(self, steps: int) -> np.ndarray:
        """Noise array of shape (steps, n_agents, n)."""
        cols = []
        for i, L in enumerate(self.factors):
            z = self.generator(self.seed, 0, i).standard_normal((steps, L.shape[1]))
            cols.append(z @ L.T)
        return np.stack(cols, axis=1)
