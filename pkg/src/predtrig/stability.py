"""Empirical stability checks: drift function, one-step bound, case partition and MSB monitor.

Squared distances here are Mahalanobis distances under each agent's one-step
noise covariance.  The one-step bound is checked in whitened coordinates
``e_w = M^{-1/2} e``, where the Mahalanobis form becomes the Euclidean one and
the relevant norm is ``||M^{-1/2} A M^{1/2}||_2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .triggering import propagation_variance, safe_inverse

CASES = ("c1", "c2", "c3a", "c3b")


def lyapunov_V(self_errors: np.ndarray, cross_errors: np.ndarray | None, V_inv: np.ndarray) -> float:
    """Sum of squared distances of all self errors and all cross errors.

    ``self_errors[i]`` is agent i's error against its own model estimate;
    ``cross_errors[j, i]`` is agent i's state minus agent j's estimate of it
    (the diagonal is ignored).  ``V_inv[i]`` weights every error about agent i.
    """
    self_errors = np.atleast_2d(np.asarray(self_errors, dtype=float))
    V_inv = np.asarray(V_inv, dtype=float).reshape(-1, self_errors.shape[1], self_errors.shape[1])
    total = float(np.einsum("ia,iab,ib->", self_errors, V_inv, self_errors))
    if cross_errors is not None:
        cross = np.asarray(cross_errors, dtype=float)
        d2 = np.einsum("jia,iab,jib->ji", cross, V_inv, cross)
        np.fill_diagonal(d2, 0.0)
        total += float(d2.sum())
    return total


def horizon_K(N: int, M_C: int) -> int:
    """Drift horizon ``ceil(2N / M_C)``; never below 2 (M_C is at most N)."""
    if M_C < 1 or N < 1:
        raise ValueError("N and M_C must be positive")
    return max(2, -(-2 * N // M_C))


def whitened(A_cl, metric) -> np.ndarray:
    """``M^{-1/2} A M^{1/2}`` for a positive-definite metric ``M``."""
    lam, vec = np.linalg.eigh(np.asarray(metric, dtype=float))
    if lam.min() <= 0:
        raise ValueError("metric must be positive definite")
    root = (vec * np.sqrt(lam)) @ vec.T
    inv_root = (vec / np.sqrt(lam)) @ vec.T
    return inv_root @ np.asarray(A_cl, dtype=float) @ root


@dataclass(frozen=True)
class OneStepBoundResult:
    passed: bool
    inconclusive: bool
    grid: np.ndarray
    lhs_mean: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        """``rhs + 3 SE - lhs``; non-negative where the bound holds."""
        return self.rhs + 3.0 * self.lhs_se - self.lhs_mean


def one_step_bound_check(A_cl, sigma_v, grid, samples: int, rng: np.random.Generator,
                 metric=None, min_samples: int = 1000) -> OneStepBoundResult:
    """Monte-Carlo test of the one-step bound at each error in ``grid``.

    For each grid error ``e`` the mean of ``d2(A e + v)`` over ``samples``
    noise draws is compared against ``||A_w||^2 d2(e) + tr(M^{-1} sigma_v)``,
    which equals ``... + n`` when the metric ``M`` is the noise covariance
    (the default).  A separate metric allows the zero-noise case.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    sigma_v = np.asarray(sigma_v, dtype=float)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    M = sigma_v if metric is None else np.asarray(metric, dtype=float)
    M_inv = np.linalg.inv(M)
    norm_sq = np.linalg.norm(whitened(A_cl, M), 2) ** 2
    noise_term = float(np.trace(M_inv @ sigma_v))

    lam, vec = np.linalg.eigh(sigma_v)
    factor = vec * np.sqrt(np.clip(lam, 0.0, None))
    n = A_cl.shape[0]
    lhs_mean = np.empty(len(grid))
    lhs_se = np.empty(len(grid))
    rhs = np.empty(len(grid))
    for g, e in enumerate(grid):
        nxt = A_cl @ e + rng.standard_normal((samples, n)) @ factor.T
        d2 = np.einsum("sa,ab,sb->s", nxt, M_inv, nxt)
        lhs_mean[g] = d2.mean()
        lhs_se[g] = d2.std(ddof=1) / math.sqrt(samples) if samples > 1 else np.inf
        rhs[g] = norm_sq * float(e @ M_inv @ e) + noise_term
    inconclusive = samples < min_samples
    passed = (not inconclusive) and bool(np.all(lhs_mean <= rhs + 3.0 * lhs_se))
    return OneStepBoundResult(passed, inconclusive, grid, lhs_mean, lhs_se, rhs)


@dataclass(frozen=True)
class MsbReport:
    window: int
    growth: float
    window_means: np.ndarray
    sup_first: float
    sup_second: float
    bounded: bool

    @property
    def ratio(self) -> float:
        if self.sup_first == 0.0:
            return 0.0 if self.sup_second == 0.0 else math.inf
        return self.sup_second / self.sup_first


def squared_norms(states: np.ndarray) -> np.ndarray:
    """``sum_i ||x_i(k)||^2`` per round from a (T, N, n) state array."""
    return np.einsum("kia,kia->k", states, states)


def msb_monitor(series: np.ndarray, window: int, growth: float = 1.2) -> MsbReport:
    """Boundedness verdict from the running window mean of a per-round second moment.

    ``series`` is either the per-round ``sum_i ||x_i||^2`` or a (T, N, n)
    state array.  Windows are assigned to the half of the run in which they
    end.  Any non-finite value makes the run unbounded.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 3:
        with np.errstate(over="ignore", invalid="ignore"):
            series = squared_norms(series)
    if window < 1:
        raise ConfigurationError("window must be positive")
    if len(series) < 10 * window:
        raise ConfigurationError(f"trace of {len(series)} rounds is shorter than 10 windows of {window}")
    if not np.all(np.isfinite(series)):
        return MsbReport(window, growth, np.array([np.inf]), math.inf, math.inf, False)
    csum = np.concatenate(([0.0], np.cumsum(series)))
    means = (csum[window:] - csum[:-window]) / window
    ends = np.arange(window - 1, len(series))
    half = len(series) // 2
    first = means[ends < half]
    second = means[ends >= half]
    sup_first = float(first.max())
    sup_second = float(second.max())
    bounded = bool(np.isfinite(sup_second) and sup_second <= growth * sup_first)
    return MsbReport(window, growth, means, sup_first, sup_second, bounded)


@dataclass
class DriftProbe:
    """Per-window bookkeeping of the drift argument over one trace."""

    K: int
    V: np.ndarray
    window: int
    counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CASES, 0))
    # labels[w, i]: case of agent i in window w
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if np.any(np.asarray(self.V) < 0):
            raise ValueError("drift values must be non-negative")


def classify_windows(d2: np.ndarray, kappa: np.ndarray, delta: np.ndarray, K: int) -> np.ndarray:
    """Assign every (window, agent) pair to exactly one case.

    Windows are the non-overlapping blocks ``[wK, (w+1)K)`` of the trace.
    The distance at the last round of the block decides between c1 (at or
    below ``delta``) and the others.  Above the threshold, c2 means at least
    one transmission in the block; otherwise the agent is c3a if its distance
    was at or below ``delta`` somewhere in the block and c3b if never.
    Returns a (W, N) array of indices into :data:`CASES`.
    """
    d2 = np.asarray(d2, dtype=float)
    kappa = np.asarray(kappa, dtype=bool)
    W = d2.shape[0] // K
    d2w = d2[: W * K].reshape(W, K, -1)
    kw = kappa[: W * K].reshape(W, K, -1)
    last_above = d2w[:, -1, :] > delta
    sent = kw.any(axis=1)
    ever_below = (d2w <= delta).any(axis=1)
    labels = np.zeros(last_above.shape, dtype=np.int64)
    labels[last_above & sent] = 1
    labels[last_above & ~sent & ever_below] = 2
    labels[last_above & ~sent & ~ever_below] = 3
    return labels


def drift_probe(d2: np.ndarray, kappa: np.ndarray, delta: np.ndarray, N: int, M_C: int,
                V: np.ndarray | None = None) -> DriftProbe:
    K = horizon_K(N, M_C)
    labels = classify_windows(d2, kappa, delta, K)
    counts = {name: int((labels == c).sum()) for c, name in enumerate(CASES)}
    V = np.asarray(d2, dtype=float).sum(axis=1) if V is None else np.asarray(V, dtype=float)
    return DriftProbe(K, V, K, counts, labels)


def accumulation_bound(A_cl, sigma_v, steps: int) -> float:
    """``sum_{s<steps} n ||A_w^s||^2``: noise accumulated over ``steps`` silent rounds."""
    Aw = whitened(A_cl, sigma_v)
    n = Aw.shape[0]
    total, P = 0.0, np.eye(n)
    for _ in range(steps):
        total += n * np.linalg.norm(P, 2) ** 2
        P = Aw @ P
    return total


def accumulation_expectation(A_cl, sigma_v, steps: int) -> float:
    """Exact ``E[d2]`` of the error ``steps`` rounds after a reset: ``tr(sigma^-1 V_steps)``."""
    V = propagation_variance(A_cl, sigma_v, steps)
    return float(np.trace(safe_inverse(sigma_v) @ V))


@dataclass(frozen=True)
class AccumulationCheck:
    samples: int
    mean_ratio: float
    se: float

    @property
    def passed(self) -> bool:
        return self.samples > 1 and self.mean_ratio <= 1.0 + 3.0 * self.se


def transmission_window_check(d2: np.ndarray, kappa: np.ndarray, A_cl: np.ndarray, sigma_v: np.ndarray,
                              K: int, agents=None, labels: np.ndarray | None = None,
                              case: int | None = None) -> AccumulationCheck:
    """Compare realized end-of-window distances with the noise-accumulation bound.

    For every block with a transmission before its last round, the error at
    the last round is pure noise accumulated since the last transmission, so
    its expected distance is below :func:`accumulation_bound`.  The check
    averages ``realized / bound`` over blocks and passes if the mean is within
    three standard errors of 1.  ``case`` restricts to blocks with that label.
    """
    d2 = np.asarray(d2, dtype=float)
    kappa = np.asarray(kappa, dtype=bool)
    agents = range(d2.shape[1]) if agents is None else agents
    W = d2.shape[0] // K
    cache: dict[tuple[int, int], float] = {}
    ratios = []
    for i in agents:
        for w in range(W):
            if case is not None and labels is not None and labels[w, i] != case:
                continue
            lo, end = w * K, w * K + K - 1
            sent = np.flatnonzero(kappa[lo:end, i])
            if not len(sent):
                continue
            steps = end - (lo + int(sent[-1]))
            key = (i, steps)
            if key not in cache:
                cache[key] = accumulation_bound(A_cl[i], sigma_v[i], steps)
            ratios.append(d2[end, i] / cache[key])
    r = np.asarray(ratios)
    if len(r) < 2:
        return AccumulationCheck(len(r), float(r.mean()) if len(r) else math.nan, math.inf)
    return AccumulationCheck(len(r), float(r.mean()), float(r.std(ddof=1) / math.sqrt(len(r))))
