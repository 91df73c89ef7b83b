"""Predictive priority measure, its Chernoff surrogate and quantization.

An agent's need to communicate is scored from the squared Mahalanobis
distance of its predicted self-estimation error ``H + 1`` rounds ahead,
compared against a per-agent threshold ``delta``.  The score is oriented so
that larger predicted errors always rank higher, and it crosses 0.5 exactly
when the predicted distance reaches the threshold:

* below the threshold: ``0.5 * Pr[chi2_n > delta - d2]``
* above the threshold: ``0.5 + 0.5 * Pr[chi2_n <= d2 - delta]``

The plain closed form ``gamma(n/2, (delta - d2)/2) / Gamma(n/2)`` is
available as :func:`closed_form_measure`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .specfun import chi2_cdf, chi2_sf, gammainc_lower


def mahalanobis_sq(e, V_inv) -> float:
    e = np.asarray(e, dtype=float)
    return float(e @ np.asarray(V_inv, dtype=float) @ e)


def propagation_variance(A_prop, sigma_v, h: int) -> np.ndarray:
    """``sum_{s=0}^{h-1} A^s sigma_v (A^s)^T``: error variance after ``h`` silent rounds."""
    A_prop = np.asarray(A_prop, dtype=float)
    V = np.zeros_like(A_prop)
    Ak = np.eye(A_prop.shape[0])
    for _ in range(h):
        V = V + Ak @ sigma_v @ Ak.T
        Ak = A_prop @ Ak
    return 0.5 * (V + V.T)


def safe_inverse(V, floor: float = 1e-12) -> np.ndarray:
    """Inverse of a covariance; eigenvalues below ``floor`` are lifted to it first."""
    lam, vec = np.linalg.eigh(V)
    if lam.min() > floor:
        inv = np.linalg.inv(V)
    else:
        inv = (vec / np.maximum(lam, floor)) @ vec.T
    return 0.5 * (inv + inv.T)


def propagate_error_mean(A_cl, e, H: int) -> np.ndarray:
    """Predicted error mean ``A_cl^(H+1) e`` after ``H + 1`` rounds without communication."""
    return np.linalg.matrix_power(np.asarray(A_cl, dtype=float), H + 1) @ np.asarray(e, dtype=float)


def closed_form_measure(delta: float, d_sq: float, n: int) -> float:
    """``gamma(n/2, (delta - d_sq)/2) / Gamma(n/2)``, zero once the threshold is reached."""
    return gammainc_lower(n / 2.0, (delta - d_sq) / 2.0) if d_sq < delta else 0.0


def priority(delta: float, d_sq: float, n: int) -> float:
    """Exact priority in [0, 1]; monotone increasing in ``d_sq``."""
    if n < 1:
        raise ValueError("n must be positive")
    t = d_sq - delta
    if t <= 0.0:
        return 0.5 * chi2_sf(-t, n)
    return 0.5 + 0.5 * chi2_cdf(t, n)


def chernoff_cdf(x, n: int):
    """Chernoff-bound surrogate for the chi-square CDF.

    With ``beta = x / n`` and ``f = (beta * exp(1 - beta))^(n/2)``, the
    Dasgupta-Gupta bounds give ``Pr[chi2 <= x] <= f`` for ``beta < 1`` and
    ``Pr[chi2 >= x] <= f`` for ``beta > 1``.  Halving ``f`` joins both tails
    into one continuous, strictly increasing curve through 0.5 at ``x = n``.
    """
    beta, f = _chernoff_f(x, n)
    out = np.where(beta <= 1.0, 0.5 * f, 1.0 - 0.5 * f)
    return out if out.ndim else float(out)


def chernoff_sf(x, n: int):
    """``1 - chernoff_cdf(x, n)`` without cancellation in the upper tail."""
    beta, f = _chernoff_f(x, n)
    out = np.where(beta <= 1.0, 1.0 - 0.5 * f, 0.5 * f)
    return out if out.ndim else float(out)


def _chernoff_f(x, n: int):
    beta = np.asarray(x, dtype=float) / n
    with np.errstate(divide="ignore"):
        logf = 0.5 * n * (np.log(beta) + 1.0 - beta)
    return beta, np.exp(logf)


def priority_chernoff(delta, d_sq, n: int):
    """Chernoff approximation of :func:`priority`; vectorized over ``delta`` and ``d_sq``."""
    t = np.asarray(d_sq, dtype=float) - np.asarray(delta, dtype=float)
    below = 0.5 * chernoff_sf(np.abs(t), n)
    above = 0.5 + 0.5 * chernoff_cdf(np.abs(t), n)
    out = np.where(t <= 0.0, below, above)
    return out if out.ndim else float(out)


def quantize(P, W_P: int, e=None, e_max=None) -> int:
    """Map a priority to ``W_P`` bits; any ``|e_c| > e_max_c`` forces the top level."""
    if W_P < 1:
        raise ValueError("W_P must be at least 1")
    top = 2 ** W_P - 1
    if e is not None and e_max is not None and np.any(np.abs(e) > np.asarray(e_max)):
        return top
    return int(min(top, max(0, np.floor(P * top + 0.5))))


def quantize_array(P: np.ndarray, W_P: int, saturated: np.ndarray | None = None) -> np.ndarray:
    top = 2 ** W_P - 1
    q = np.clip(np.floor(np.asarray(P) * top + 0.5), 0, top).astype(np.int64)
    if saturated is not None:
        q[np.asarray(saturated, dtype=bool)] = top
    return q


@dataclass(frozen=True)
class PriorityRecord:
    agent: int
    P_H: float
    P_0: float
    quantized: int
    quantized_0: int
    W_P: int = 4


@dataclass(frozen=True)
class ErrorStatistics:
    """Per-agent propagation matrices, inverse variances and thresholds.

    Arrays are indexed ``[agent]``; the ``*_H`` members describe the
    ``H + 1``-round horizon used for scheduling and the ``*_0`` members the
    one-round horizon of the instantaneous check.
    """

    H: int
    A_cl: np.ndarray
    A_pow_H: np.ndarray
    V_H: np.ndarray
    V_inv_H: np.ndarray
    delta_H: np.ndarray
    V_0: np.ndarray
    V_inv_0: np.ndarray
    delta_0: np.ndarray
    e_max: np.ndarray

    @property
    def n(self) -> int:
        return self.A_cl.shape[1]

    @classmethod
    def build(cls, A_cl: Sequence[np.ndarray], sigma_v: Sequence[np.ndarray], e_max, H: int = 1,
              variance_floor: float = 1e-12) -> "ErrorStatistics":
        A_cl = np.asarray(A_cl, dtype=float)
        e_max = np.asarray(e_max, dtype=float)
        V_H = np.stack([propagation_variance(a, s, H + 1) for a, s in zip(A_cl, sigma_v)])
        V_0 = np.stack([propagation_variance(a, s, 1) for a, s in zip(A_cl, sigma_v)])
        V_inv_H = np.stack([safe_inverse(v, variance_floor) for v in V_H])
        V_inv_0 = np.stack([safe_inverse(v, variance_floor) for v in V_0])
        return cls(
            H=H,
            A_cl=A_cl,
            A_pow_H=np.stack([np.linalg.matrix_power(a, H + 1) for a in A_cl]),
            V_H=V_H,
            V_inv_H=V_inv_H,
            delta_H=np.einsum("a,iab,b->i", e_max, V_inv_H, e_max),
            V_0=V_0,
            V_inv_0=V_inv_0,
            delta_0=np.einsum("a,iab,b->i", e_max, V_inv_0, e_max),
            e_max=e_max,
        )

    def predicted_distances(self, errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Squared distances of the predicted errors for both horizons; ``errors`` is (N, n)."""
        mu_H = np.einsum("iab,ib->ia", self.A_pow_H, errors)
        mu_0 = np.einsum("iab,ib->ia", self.A_cl, errors)
        d_H = np.einsum("ia,iab,ib->i", mu_H, self.V_inv_H, mu_H)
        d_0 = np.einsum("ia,iab,ib->i", mu_0, self.V_inv_0, mu_0)
        return d_H, d_0

    def priorities(self, errors: np.ndarray, method: str = "chernoff") -> tuple[np.ndarray, np.ndarray]:
        """Raw ``(P_H, P_0)`` for all agents."""
        d_H, d_0 = self.predicted_distances(errors)
        if method == "chernoff":
            return (np.asarray(priority_chernoff(self.delta_H, d_H, self.n)),
                    np.asarray(priority_chernoff(self.delta_0, d_0, self.n)))
        if method == "exact":
            return (np.array([priority(dl, d, self.n) for dl, d in zip(self.delta_H, d_H)]),
                    np.array([priority(dl, d, self.n) for dl, d in zip(self.delta_0, d_0)]))
        raise ValueError(f"unknown priority method {method!r}")

    def saturated(self, errors: np.ndarray) -> np.ndarray:
        return np.any(np.abs(errors) > self.e_max, axis=1)
