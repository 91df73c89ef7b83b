"""Scenario execution: the per-round pipeline for both modes.

Round ``k`` (trace row ``k``) proceeds as follows:

1. every agent computes ``u(k)`` from its own state and its estimates;
2. every agent computes its self-estimation error and both priorities;
3. the communication round runs with the schedule built from the previous
   row's aggregate (round-robin in periodic mode) and carries ``x(k)``;
4. the current scheduling priorities are exchanged, giving the next schedule;
5. the plants step to ``k + 1``; disturbance holds are applied;
6. all estimator banks advance to ``k + 1``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..control import GainSet, load_gains, solve_lqr
from ..dynamics import CART_POS, LtiModel, NoiseStreams, apply_holds, noise_factor
from ..errors import ContractViolation, PredtrigError
from ..estimation import EstimatorDynamics, propagate_banks
from ..netsim import draw_round, execute_round, priority_exchange
from ..scheduler import compute_schedule
from ..triggering import ErrorStatistics, quantize, quantize_array
from .config import ScenarioConfig
from .metrics import summarize
from .trace import Trace, write_trace

NETWORK_STREAM = 1


def periodic_baseline_schedule(N: int, M_C: int, round_index: int) -> tuple[int, ...]:
    """Round-robin grants ``(round * M_C + j) mod N`` for ``j < M_C``."""
    if M_C < 1:
        raise ValueError("M_C must be at least 1")
    return tuple(sorted({(round_index * M_C + j) % N for j in range(min(M_C, N))}))


@dataclass(frozen=True)
class Setup:
    config: ScenarioConfig
    models: list[LtiModel]
    gains: GainSet
    dyn: EstimatorDynamics
    stats: ErrorStatistics
    M_C: int
    P_delta_q: int


def prepare(config: ScenarioConfig, gains: GainSet | None = None) -> Setup:
    models = config.models()
    if gains is None:
        if config.zero_gains:
            gains = GainSet.zeros(config.n_agents, models[0].n, models[0].m)
        elif config.gains_path:
            gains = load_gains(config.gains_path)
        else:
            gains = solve_lqr(models, config.cost_spec())
    if gains.n_agents != config.n_agents:
        raise ContractViolation(f"gains cover {gains.n_agents} agents, scenario has {config.n_agents}")
    dyn = EstimatorDynamics.build(models, gains)
    trig = config.trigger
    stats = ErrorStatistics.build(dyn.A_cl, [m.sigma_v for m in models], trig.e_max, trig.H, trig.variance_floor)
    P_delta_q = quantize(trig.P_delta, config.network.W_P)
    return Setup(config, models, gains, dyn, stats, config.control_messages(), P_delta_q)


@dataclass
class ScenarioResult:
    trace: Trace
    summary: dict
    setup: Setup


def _meta(setup: Setup) -> dict:
    cfg = setup.config
    start, end = (cfg.disturbances[0].start_step, cfg.disturbances[0].end_step) if cfg.disturbances else (None, None)
    return {
        "config": cfg.to_dict(),
        "rounds": cfg.rounds,
        "n_agents": cfg.n_agents,
        "n": setup.models[0].n,
        "m": setup.models[0].m,
        "M_C": setup.M_C,
        "W_P": cfg.network.W_P,
        "P_delta_q": setup.P_delta_q,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "disturbance_window": [start, end] if cfg.disturbances else None,
        "delta_0": setup.stats.delta_0.tolist(),
        "delta_H": setup.stats.delta_H.tolist(),
    }


def run_scenario(config: ScenarioConfig, gains: GainSet | None = None, trace_path=None) -> ScenarioResult:
    """Simulate ``config.rounds`` rounds; deterministic given the config (seed included)."""
    setup = prepare(config, gains)
    cfg = setup.config
    N, T = cfg.n_agents, cfg.rounds
    n, m = setup.models[0].n, setup.models[0].m
    M_C, qd = setup.M_C, setup.P_delta_q
    stats, dyn = setup.stats, setup.dyn
    W_P = cfg.network.W_P
    net = dataclasses.replace(cfg.network, M_C=M_C)

    A = np.stack([mod.A for mod in setup.models])
    B = np.stack([mod.B for mod in setup.models])
    Fb = setup.gains.blocks()
    cost = cfg.cost_spec()
    Qs = np.stack(cost.Q)
    Rs = np.stack(cost.R)
    S = cost.Q_sync

    noise = NoiseStreams(cfg.seed, [noise_factor(mod.sigma_v) for mod in setup.models]).draw(T)
    net_rng = NoiseStreams.generator(cfg.seed, NETWORK_STREAM)

    tr = Trace.allocate(T, N, n, m)
    tr.meta = _meta(setup)
    X = np.zeros((N, n))
    banks = np.zeros((N, N, n))  # banks[owner, target]
    diag = np.arange(N)
    next_grant: tuple[int, ...] = ()
    agg_held = np.ones(N, dtype=bool)
    completed = T

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            try:
                est = banks.copy()
                est[diag, diag] = X
                u = np.einsum("ijab,ijb->ia", Fb, est)
                e = X - banks[diag, diag]
                pH, p0 = stats.priorities(e, cfg.trigger.method)
                sat = stats.saturated(e)
                qH = quantize_array(pH, W_P, sat)
                q0 = quantize_array(p0, W_P, sat)

                if cfg.predictive:
                    granted = next_grant
                    send = [i for i in granted if agg_held[i] and q0[i] > qd]
                else:
                    granted = periodic_baseline_schedule(N, M_C, k)
                    send = list(granted)
                skip = [i for i in granted if i not in send]
                out = execute_round(net, granted, skip, M_C=M_C, k=k, draws=draw_round(net_rng, N))
                if out.n_used > M_C:
                    raise ContractViolation(f"{out.n_used} transmissions exceed M_C={M_C}")
                if cfg.predictive:
                    rogue = np.flatnonzero(out.kappa & ~agg_held)
                    if len(rogue):
                        raise ContractViolation(f"agent {rogue[0]} transmitted without the final aggregate")
                    next_grant = compute_schedule(priority_exchange(qH, M_C), M_C, qd, k + 1).granted
                    agg_held = out.has_aggregate
                else:
                    agg_held = np.ones(N, dtype=bool)

                d2 = np.einsum("ia,iab,ib->i", e, stats.V_inv_0, e)
                cross = X[None, :, :] - banks
                dc = np.einsum("jia,iab,jib->ji", cross, stats.V_inv_0, cross)
                dc[diag, diag] = 0.0
                tot = X.sum(axis=0)
                tr.cost[k] = (np.einsum("ia,iab,ib->", X, Qs, X) + np.einsum("ia,iab,ib->", u, Rs, u)
                              + N * np.einsum("ia,ab,ib->", X, S, X) - tot @ S @ tot)

                tr.x[k], tr.u[k], tr.e[k], tr.d2[k] = X, u, e, d2
                tr.pH[k], tr.p0[k], tr.qH[k], tr.q0[k] = pH, p0, qH, q0
                tr.granted[k, list(granted)] = True
                tr.kappa[k] = out.kappa
                tr.skipped[k, list(out.skipped)] = True
                tr.has_agg[k] = agg_held
                tr.delivered[k] = out.delivered
                tr.unassigned[k] = out.unassigned
                tr.slots[k] = out.slots
                tr.V_self[k] = d2.sum()
                tr.V_cross[k] = dc.sum()

                X_next = np.einsum("iab,ib->ia", A, X) + np.einsum("iab,ib->ia", B, u) + noise[k]
                apply_holds(X_next, k + 1, cfg.disturbances)
                if cfg.clamp_track:
                    np.clip(X_next[:, CART_POS], -cfg.track_half_length, cfg.track_half_length,
                            out=X_next[:, CART_POS])
                banks = propagate_banks(banks, out.delivered, X, dyn)
            except PredtrigError as exc:
                raise type(exc)(f"round {k}: {exc}") from exc
            if not np.all(np.isfinite(X_next)):
                completed = k + 1
                tr.meta["diverged"] = True
                tr.meta["diverged_at"] = k + 1
                break
            X = X_next

    tr.truncate(completed)
    tr.meta["rounds_completed"] = completed
    summary = summarize(tr, cost)
    tr.meta["summary"] = summary
    path = trace_path or cfg.trace_path
    if path:
        write_trace(tr, path)
    return ScenarioResult(tr, summary, setup)
