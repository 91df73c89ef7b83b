"""Command line entry point: ``predtrig <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime contract
violation, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..control import save_gains, solve_lqr, spectral_radius
from ..errors import ConfigurationError, PredtrigError
from ..netsim import aggregate_size, control_bandwidth, round_time_us
from .config import load_config, reference_config

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = load_config(args.config) if args.config else reference_config()
    changes = {}
    for key in ("mode", "seed", "rounds"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.with_(**changes) if changes else cfg


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    models = cfg.models()
    gains = solve_lqr(models, cfg.cost_spec())
    save_gains(args.out, gains)
    local = [spectral_radius(gains.local_closed_loop(models, i)) for i in range(cfg.n_agents)]
    print(f"gains written to {args.out}")
    print(f"closed-loop spectral radius {spectral_radius(gains.closed_loop(models)):.6f}")
    print(f"local closed-loop spectral radius max {max(local):.6f}")
    return EXIT_OK


def cmd_bandwidth(args) -> int:
    cfg = _config(args)
    net = cfg.network
    changes = {k: v for k, v in (("M_A", args.M_A), ("n_agents", args.n_agents)) if v is not None}
    if changes:
        import dataclasses
        net = dataclasses.replace(net, **changes)
    rows = []
    for predictive in (False, True):
        M_C = control_bandwidth(net, predictive)
        S = aggregate_size(net.n_agents, net.W_P, M_C) if predictive else 0
        rows.append({"mode": "predictive" if predictive else "periodic", "N": net.n_agents, "M_A": net.M_A,
                     "M_C": M_C, "aggregate_bytes": S,
                     "round_us": float(round_time_us(net, predictive, M_C))})
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for r in rows:
            print(f"{r['mode']:<10}  N={r['N']}  M_A={r['M_A']}  M_C={r['M_C']}  S={r['aggregate_bytes']}  "
                  f"round={r['round_us']:.1f} us")
    return EXIT_OK


def cmd_run(args) -> int:
    from .runner import run_scenario

    cfg = _config(args)
    res = run_scenario(cfg, trace_path=args.trace)
    text = json.dumps(res.summary, indent=2)
    if args.summary:
        Path(args.summary).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    from .metrics import compare_modes

    cfg = _config(args)
    cmp = compare_modes(cfg, args.seeds, workers=args.workers)
    print(cmp.report())
    top = cmp.grants_during.argmax(axis=1)
    print("most granted agent during disturbance per seed:", top.tolist())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .trace import read_trace
    from .verify import verify_reference, verify_trace

    if args.trace:
        reports = [verify_trace(read_trace(p)) for p in args.trace]
    else:
        cfg = _config(args)
        reports = [verify_reference(cfg, seeds=tuple(args.seeds), rounds=args.verify_rounds,
                                    samples=args.samples)]
    ok = all(r.passed for r in reports)
    for r in reports:
        print(r.text())
    if args.json:
        Path(args.json).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    print("verification " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_plot(args) -> int:
    from .plotting import plot_all
    from .trace import read_trace

    traces = [read_trace(p) for p in args.traces]
    labels = args.labels or [Path(p).stem for p in args.traces]
    if len(labels) != len(traces):
        raise ConfigurationError("need one label per trace")
    for p in plot_all(traces, labels, args.out, args.window):
        print(p)
    return EXIT_OK


def cmd_recompute(args) -> int:
    from .metrics import audit_trace
    from .trace import read_trace

    report = audit_trace(read_trace(args.trace))
    for key in report.mismatched_keys:
        print(f"summary mismatch: {key}")
    for name in report.failed_checks:
        print(f"check failed: {name}")
    print("trace audit " + ("passed" if report.ok else "FAILED"))
    return EXIT_OK if report.ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="predtrig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(sp, run_args=True):
        sp.add_argument("--config", help="scenario JSON (default: packaged reference scenario)")
        if run_args:
            sp.add_argument("--mode", choices=("predictive", "periodic"))
            sp.add_argument("--seed", type=int)
            sp.add_argument("--rounds", type=int)

    sp = sub.add_parser("synthesize", help="synthesize and save the distributed LQR gains")
    scenario_args(sp, run_args=False)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("bandwidth", help="control messages per round for both modes")
    scenario_args(sp, run_args=False)
    sp.add_argument("--M-A", dest="M_A", type=int)
    sp.add_argument("--n-agents", type=int)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_bandwidth)

    sp = sub.add_parser("run", help="run one scenario")
    scenario_args(sp)
    sp.add_argument("--trace", help="write the per-round trace CSV here")
    sp.add_argument("--summary", help="write the summary JSON here")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="compare predictive and periodic modes over matched seeds")
    scenario_args(sp)
    sp.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("verify", help="stability verification (reference runs or given traces)")
    scenario_args(sp)
    sp.add_argument("--trace", nargs="+", help="verify these traces instead of running the reference suite")
    sp.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    sp.add_argument("--verify-rounds", type=int, default=10_000)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--json", help="write the machine-readable report here")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("plot", help="cost, allocation and priority figures from traces")
    sp.add_argument("traces", nargs="+")
    sp.add_argument("--labels", nargs="+")
    sp.add_argument("--out", default="figures")
    sp.add_argument("--window", type=int, default=50)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("recompute", help="recompute the summary from a trace and audit it")
    sp.add_argument("trace")
    sp.set_defaults(func=cmd_recompute)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PredtrigError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
