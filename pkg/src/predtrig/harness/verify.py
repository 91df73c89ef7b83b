"""Stability verification suite behind the ``verify`` subcommand."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..stability import drift_probe, one_step_bound_check, transmission_window_check, CASES
from .config import ScenarioConfig
from .metrics import msb_verdict
from .runner import prepare, run_scenario
from .trace import Trace


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, **detail) -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def text(self) -> str:
        width = max((len(c.name) for c in self.checks), default=0)
        rows = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  "
                + " ".join(f"{k}={_fmt(v)}" for k, v in c.detail.items()) for c in self.checks]
        return "\n".join(rows)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed, **c.detail} for c in self.checks]}


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def msb_check(report: VerificationReport, name: str, trace: Trace, window: int, growth: float,
              expect_bounded: bool = True) -> None:
    verdict = msb_verdict(trace, window, growth)
    report.add(name, verdict.bounded == expect_bounded, bounded=verdict.bounded,
               sup_first=verdict.sup_first, sup_second=verdict.sup_second)


def drift_checks(report: VerificationReport, name: str, trace: Trace, config: ScenarioConfig) -> None:
    setup = prepare(config)
    sigma = np.stack([m.sigma_v for m in setup.models])
    probe = drift_probe(trace.d2, trace.kappa, setup.stats.delta_0, config.n_agents, setup.M_C,
                        V=trace.V_self + trace.V_cross)
    total = sum(probe.counts.values())
    report.add(f"{name}: case partition", total == probe.labels.size, K=probe.K, **probe.counts)
    # noise accumulation holds for agents following the noise model; held agents do not
    held = {d.agent_id for d in config.disturbances}
    agents = [i for i in range(config.n_agents) if i not in held]
    acc = transmission_window_check(trace.d2, trace.kappa, setup.stats.A_cl, sigma, probe.K, agents)
    report.add(f"{name}: noise accumulation after transmission", acc.passed,
               windows=acc.samples, mean_ratio=acc.mean_ratio, se=acc.se)
    c2 = transmission_window_check(trace.d2, trace.kappa, setup.stats.A_cl, sigma, probe.K, agents,
                                   probe.labels, CASES.index("c2"))
    report.add(f"{name}: noise accumulation, c2 windows (informational)", True,
               windows=c2.samples, mean_ratio=c2.mean_ratio)


def one_step_bound_checks(report: VerificationReport, config: ScenarioConfig, samples: int = 100_000,
                  seed: int = 0) -> None:
    setup = prepare(config)
    rng = np.random.default_rng(seed)
    seen = set()
    for i, cname in enumerate(config.roster):
        if cname in seen:
            continue
        seen.add(cname)
        sigma = setup.models[i].sigma_v
        std = np.sqrt(np.diag(sigma))
        grid = np.vstack([np.zeros(len(std)), rng.normal(size=(9, len(std))) * std * rng.uniform(0.5, 20, (9, 1))])
        res = one_step_bound_check(setup.stats.A_cl[i], sigma, grid, samples, rng)
        report.add(f"one-step bound, class {cname}", res.passed, inconclusive=res.inconclusive,
                   min_margin=float(res.margin.min()))


def verify_reference(config: ScenarioConfig, seeds=(1, 2, 3), rounds: int = 10_000,
                     samples: int = 100_000, sanity: bool = True, loss_stress: bool = True) -> VerificationReport:
    report = VerificationReport()
    base = config.with_(rounds=rounds, trace_path=None)
    for s in seeds:
        r = run_scenario(base.with_(seed=s))
        msb_check(report, f"MSB seed {s}", r.trace, base.msb_window, base.msb_growth)
        if s == seeds[0]:
            drift_checks(report, f"seed {s}", r.trace, base.with_(seed=s))
    if loss_stress:
        r = run_scenario(base.with_network(p_loss=0.1))
        msb_check(report, "MSB loss stress p_loss=0.1", r.trace, base.msb_window, base.msb_growth)
    if sanity:
        r = run_scenario(base.with_(zero_gains=True))
        msb_check(report, "MSB destabilized sanity (expect unbounded)", r.trace, base.msb_window,
                  base.msb_growth, expect_bounded=False)
    one_step_bound_checks(report, base, samples)
    return report


def verify_trace(trace: Trace) -> VerificationReport:
    config = ScenarioConfig.from_dict(trace.meta["config"])
    report = VerificationReport()
    msb_check(report, "MSB", trace, config.msb_window, config.msb_growth)
    if not trace.meta.get("diverged"):
        drift_checks(report, "trace", trace, config)
    return report
