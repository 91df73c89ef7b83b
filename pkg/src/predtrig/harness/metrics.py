"""Cost evaluation, run summaries and the mode comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..control import CostSpec
from ..stability import MsbReport, msb_monitor


def stage_cost(x: np.ndarray, u: np.ndarray, cost: CostSpec) -> np.ndarray:
    """Per-round quadratic cost: state and input terms plus pairwise synchronization.

    ``x`` is (T, N, n), ``u`` is (T, N, m).  The pairwise sum over ``i < j``
    of ``(x_i - x_j)' S (x_i - x_j)`` is evaluated as
    ``N sum_i x_i' S x_i - (sum_i x_i)' S (sum_i x_i)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    Q = np.stack(cost.Q)
    R = np.stack(cost.R)
    S = cost.Q_sync
    N = x.shape[1]
    own = np.einsum("tia,iab,tib->t", x, Q, x) + np.einsum("tia,iab,tib->t", u, R, u)
    total = x.sum(axis=1)
    sync = N * np.einsum("tia,ab,tib->t", x, S, x) - np.einsum("ta,ab,tb->t", total, S, total)
    return own + sync


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over ``window`` rounds; entry ``k`` covers rounds ``k .. k + window - 1``."""
    if window < 1:
        raise ValueError("window must be positive")
    series = np.asarray(series, dtype=float)
    if len(series) < window:
        return np.empty(0)
    csum = np.concatenate(([0.0], np.cumsum(series)))
    return (csum[window:] - csum[:-window]) / window


@dataclass(frozen=True)
class CostReport:
    series: np.ndarray
    smoothed: np.ndarray
    mean: float


def evaluate_cost(x: np.ndarray, u: np.ndarray, cost: CostSpec, window: int = 50) -> CostReport:
    series = stage_cost(x, u, cost)
    return CostReport(series, moving_average(series, window), float(series.mean()) if len(series) else float("nan"))


def phase_bounds(meta: dict) -> tuple[int, int, int]:
    """``(start, end, T)``: rounds ``[0, start)`` are "pre", ``[start, end)`` are "during".

    The first disturbance sets the split; without one the run is halved.
    """
    T = int(meta["rounds"])
    dist = meta.get("disturbance_window")
    if dist:
        start, end = (min(int(v), T) for v in dist)
    else:
        start, end = T // 2, T
    return start, end, T


def _mean(a: np.ndarray) -> float:
    return float(a.mean()) if len(a) else float("nan")


def summarize(trace, cost: CostSpec) -> dict:
    """Summary metrics, all computable from the trace arrays and metadata."""
    meta = trace.meta
    start, end, _ = phase_bounds(meta)
    T = trace.rounds
    with np.errstate(over="ignore", invalid="ignore"):
        series = stage_cost(trace.x, trace.u, cost)
    used = trace.kappa.sum(axis=1)
    hist = np.stack([np.bincount(trace.qH[:, i], minlength=2 ** meta["W_P"]) for i in range(trace.n_agents)])
    return {
        "rounds_completed": int(T),
        "diverged": bool(meta.get("diverged", False)),
        "mean_cost": _mean(series),
        "mean_cost_pre": _mean(series[:start]),
        "mean_cost_during": _mean(series[start:end]),
        "transmissions_total": int(used.sum()),
        "max_transmissions_per_round": int(used.max()) if T else 0,
        "grants_per_agent": trace.granted.sum(axis=0).astype(int).tolist(),
        "grants_during_disturbance": trace.granted[start:end].sum(axis=0).astype(int).tolist(),
        "transmissions_per_agent": trace.kappa.sum(axis=0).astype(int).tolist(),
        "skipped_total": int(trace.skipped.sum()),
        "unassigned_total": int(trace.unassigned.sum()),
        "mean_slots": _mean(trace.slots),
        "mean_V": _mean(trace.V_self + trace.V_cross),
        "priority_histogram": hist.astype(int).tolist(),
    }


def msb_verdict(trace, window: int, growth: float = 1.2) -> MsbReport:
    """MSB verdict for a run; a run stopped on a non-finite state is unbounded."""
    if trace.meta.get("diverged"):
        return MsbReport(window, growth, np.array([np.inf]), np.inf, np.inf, False)
    return msb_monitor(trace.x, window, growth)


def compare_summaries(a: dict, b: dict, rtol: float = 1e-9) -> list[str]:
    """Keys whose values differ between two summaries (floats compared with ``rtol``)."""
    bad = []
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        if isinstance(va, float) or isinstance(vb, float):
            if va is None or vb is None or not (np.isclose(va, vb, rtol=rtol, atol=0.0) or (np.isnan(va) and np.isnan(vb))):
                bad.append(key)
        elif va != vb:
            bad.append(key)
    return bad


@dataclass(frozen=True)
class ModeComparison:
    seeds: tuple[int, ...]
    predictive_pre: np.ndarray
    periodic_pre: np.ndarray
    predictive_during: np.ndarray
    periodic_during: np.ndarray
    grants_during: np.ndarray          # (seeds, N), predictive mode
    periodic_grants: np.ndarray        # (seeds, N), whole run

    @staticmethod
    def _rel(pred, per):
        return (pred - per) / per

    @property
    def rel_pre(self) -> np.ndarray:
        """Relative cost difference (predictive - periodic) / periodic before the disturbance."""
        return self._rel(self.predictive_pre, self.periodic_pre)

    @property
    def rel_during(self) -> np.ndarray:
        return self._rel(self.predictive_during, self.periodic_during)

    def report(self) -> str:
        lines = ["seed  pre:pred  pre:per  rel_pre  during:pred  during:per  rel_during"]
        for s, a, b, r1, c, d, r2 in zip(self.seeds, self.predictive_pre, self.periodic_pre, self.rel_pre,
                                         self.predictive_during, self.periodic_during, self.rel_during):
            lines.append(f"{s:4d}  {a:8.4g}  {b:7.4g}  {r1:+7.2%}  {c:11.4g}  {d:10.4g}  {r2:+10.2%}")
        lines.append(f"mean  rel_pre {self.rel_pre.mean():+.2%} (sd {self.rel_pre.std(ddof=1):.2%})  "
                     f"rel_during {self.rel_during.mean():+.2%} (sd {self.rel_during.std(ddof=1):.2%})")
        return "\n".join(lines)


def compare_modes(config, seeds, workers: int = 1) -> ModeComparison:
    """Run both modes for every seed with matched noise and disturbance."""
    from .runner import run_scenario

    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 3:
        raise ValueError("compare_modes needs at least three seeds")
    jobs = [(config.with_(mode=mode, seed=s, trace_path=None)) for s in seeds for mode in ("predictive", "periodic")]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_scenario, jobs))
    else:
        results = [run_scenario(c) for c in jobs]
    pred, per = results[0::2], results[1::2]
    get = lambda rs, key: np.array([r.summary[key] for r in rs])
    return ModeComparison(
        seeds,
        get(pred, "mean_cost_pre"), get(per, "mean_cost_pre"),
        get(pred, "mean_cost_during"), get(per, "mean_cost_during"),
        get(pred, "grants_during_disturbance"), get(per, "grants_per_agent"),
    )


@dataclass(frozen=True)
class AuditReport:
    mismatched_keys: list[str]
    failed_checks: list[str]
    recomputed: dict

    @property
    def ok(self) -> bool:
        return not self.mismatched_keys and not self.failed_checks


def audit_trace(trace) -> AuditReport:
    """Recompute the summary from the trace and cross-check the logged derived columns."""
    from .config import ScenarioConfig

    cfg = ScenarioConfig.from_dict(trace.meta["config"])
    cost = cfg.cost_spec()
    recomputed = summarize(trace, cost)
    mismatched = compare_summaries(recomputed, trace.meta.get("summary", {}))
    failed = []
    with np.errstate(over="ignore", invalid="ignore"):
        series = stage_cost(trace.x, trace.u, cost)
    if not np.allclose(series, trace.cost, rtol=1e-9, atol=1e-12):
        failed.append("cost column")
    if not np.allclose(trace.d2.sum(axis=1), trace.V_self, rtol=1e-9, atol=1e-12):
        failed.append("V_self column")
    M_C = trace.meta["M_C"]
    if np.any(trace.kappa.sum(axis=1) + trace.skipped.sum(axis=1) + trace.unassigned != M_C):
        failed.append("bandwidth conservation")
    if np.any(trace.kappa & ~trace.granted):
        failed.append("transmission without grant")
    return AuditReport(mismatched, failed, recomputed)
