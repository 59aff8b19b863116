"""Command-line entry point: ``asgd <subcommand>``.

Exit codes: 0 when every verdict passes, 1 when any fails, 2 for
configuration errors (bad keys or values, infeasible bound parameters).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from asgd import engine
from asgd.harness import experiments as ex
from asgd.harness.config import ConfigError, load_config, trace_enabled
from asgd.harness.report import ExperimentReport, emit_report
from asgd.problems import ProblemError, problem_from_config
from asgd.shared_model import SharedModel
from asgd.sim import analysis
from asgd.sim.core import simulate
from asgd.sim.strategies import make_strategy
from asgd.sim.trace import write_replay
from asgd.theory import (
    BoundParams,
    BoundVariant,
    FeasibilityViolated,
    InvalidStepSize,
    failure_prob_bound,
    feasibility_check,
    min_adversarial_delay,
    tuned_learning_rate,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _params(cfg: dict, spec) -> BoundParams:
    alpha = cfg["run.alpha"]
    return BoundParams.from_problem(
        spec,
        n=cfg["run.threads"],
        tau_max=cfg["sim.tau_max"],
        epsilon=cfg["run.epsilon"],
        theta=cfg["run.theta"],
        alpha=None if alpha == "tuned" else float(alpha),
        x0_dist_sq=cfg["problem.x0_dist_sq"],
        T=cfg["run.T"] or None,
    )


def _epoch_config(cfg: dict, params: BoundParams) -> engine.EpochConfig:
    return engine.EpochConfig(
        T=cfg["run.T"], alpha=params.step, n=cfg["run.threads"], epsilon=cfg["run.epsilon"],
        seed=cfg["run.seed"], theta=cfg["run.theta"], trace=trace_enabled(cfg),
    )


def _strategy(cfg: dict, name: str | None = None):
    extra = {}
    name = name or cfg["sim.strategy"]
    if name.replace("_", "").lower() == "boundeddelay":
        extra = {"stall_prob": cfg["sim.stall_prob"], "stall_at": cfg["sim.stall_at"]}
    return make_strategy(name, seed=cfg["sim.seed"], tau=cfg["sim.tau"], tau_max=cfg["sim.tau_max"], **extra)


def _finish(report: ExperimentReport, args) -> int:
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.name}  (n={v.sample_size}; {v.test})")
    if args.out:
        for path in emit_report(report, args.format.split(","), args.out):
            print(f"wrote {path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    spec = problem_from_config(cfg)
    params = _params(cfg, spec)
    T = params.T
    print(f"problem: {spec.kind} d={spec.d} c={spec.c:.6g} L={spec.L:.6g} M={spec.M:.6g}")
    print(f"n={params.n} tau_max={params.tau_max} eps={params.epsilon:g} theta={params.theta:g} T={T}")
    print(f"tuned alpha: async {tuned_learning_rate(params):.6g}  sequential "
          f"{tuned_learning_rate(params, 'sequential'):.6g}  bounded-delay {tuned_learning_rate(params, 'bounded-delay'):.6g}")
    print(f"alpha in use: {params.step:.6g}")
    feas = feasibility_check(params)
    print(f"feasibility: {'feasible' if feas else 'INFEASIBLE'} value={feas.value:.6g} margin={feas.margin:.6g}")
    print(f"{'variant':<14}{'raw':>14}{'clamped':>12}  note")
    for variant in BoundVariant:
        try:
            b = failure_prob_bound(params, variant)
            note = "vacuous" if b.vacuous else ""
            print(f"{variant.value:<14}{b.raw:>14.6g}{b.clamped:>12.6g}  {note}")
        except (FeasibilityViolated, InvalidStepSize) as exc:
            print(f"{variant.value:<14}{'-':>14}{'-':>12}  refused: {exc}")
    if 0 < params.step < 1:
        print(f"adversarial delay threshold at alpha={params.step:.6g}: tau >= {min_adversarial_delay(params.step)}")
    return EXIT_PASS


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    spec = problem_from_config(cfg)
    params = _params(cfg, spec)
    ecfg = _epoch_config(cfg, params)
    x0 = ex.x0_at_distance(spec, cfg["problem.x0_dist_sq"])
    res = engine.epoch_sgd(spec, SharedModel(x0), ecfg)
    print(f"iterations={res.iterations} hit_time={res.hit_time} final_dist_sq={spec.dist_sq(res.final_accumulator):.6g}")
    if res.trace is not None:
        print(f"tau_max={res.tau_max} tau_avg={res.tau_avg:.4g}")
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            path = Path(args.out) / "iterations.csv"
            path.write_text(res.trace.iterations_csv(res.taus, res.rho, spec.x_star))
            print(f"wrote {path}")
    return EXIT_PASS


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = problem_from_config(cfg)
    params = _params(cfg, spec)
    ecfg = _epoch_config(cfg, params)
    strategy = _strategy(cfg, args.strategy)
    x0 = ex.x0_at_distance(spec, cfg["problem.x0_dist_sq"])
    res = simulate(spec, ecfg, strategy, x0=x0)
    st = res.stats
    print(f"strategy={strategy.describe()} iterations={res.run.iterations} hit_time={res.run.hit_time}")
    print(f"tau_max={st.tau_max} tau_avg={st.tau_avg:.4g} max_delay={st.max_delay} digest={res.trace.digest()[:16]}")
    report = ExperimentReport(experiment_id="simulate", config={k: v for k, v in cfg.items()}, seeds=[ecfg.seed])
    for v in analysis.run_all_checks(res.trace):
        report.add_verdict(v)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.csv").write_text(res.trace.events_csv())
        (out / "iterations.csv").write_text(res.trace.iterations_csv(st.tau, st.rho, spec.x_star))
        write_replay(res.trace, out / "trace.bin")
    return _finish(report, args)


def cmd_slowdown(args) -> int:
    taus = [int(t) for t in args.tau_list.split(",") if t.strip()]
    report = ex.run_slowdown_experiment(args.alpha, taus, trials=args.trials)
    for tau in taus:
        a = report.aggregates
        print(f"tau={tau}: ratio={a[f'ratio_tau{tau}']:.6g} theory={a[f'theory_tau{tau}']:.6g} "
              f"contraction={a[f'contraction_tau{tau}']:.6g} error={a[f'contraction_error_tau{tau}']:.3g}")
    return _finish(report, args)


def cmd_mc_fail_prob(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if cfg is None:
        spec, params = ex.failure_prob_setup(d=args.d, variant=args.variant)
        strategy = "Sequential" if args.variant == "sequential" else "BoundedDelay"
        if strategy == "Sequential":
            params = params.with_(n=1)
    else:
        spec = problem_from_config(cfg)
        params = _params(cfg, spec)
        strategy = cfg["sim.strategy"]
    ex.refuse_if_infeasible(params, args.variant)
    report = ex.run_failure_prob_experiment(spec, params, strategy, trials=args.trials, variant=args.variant)
    a = report.aggregates
    print(f"T={params.T} alpha={params.step:.6g} failures={a['failures']}/{a['trials']} "
          f"wilson=[{a['wilson_low']:.4g}, {a['wilson_high']:.4g}] bound={a['bound_raw']:.4g}")
    return _finish(report, args)


def cmd_invariants(args) -> int:
    if args.sweep == "default":
        configs = ex.default_sweep()
    elif args.sweep == "sequential":
        configs = ex.sequential_sweep()
    else:
        configs = ex.default_sweep(T=256, seeds=3)
    extra = [("illegal-fixture", ex.illegal_trace_fixture())] if args.with_fixture else []
    report = ex.run_invariant_sweep(configs, extra_traces=extra)
    print(f"runs={report.aggregates['runs']} violations={report.aggregates['violations']}")
    return _finish(report, args)


def cmd_fullsgd(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        spec = problem_from_config(cfg)
        ecfg = _epoch_config(cfg, _params(cfg, spec))
    else:
        spec, ecfg = ex.fullsgd_defaults()
    report = ex.run_fullsgd_experiment(spec, ecfg, trials=args.trials)
    a = report.aggregates
    print(f"epochs={a['epochs']} mean_dist={a['mean_dist']:.4g} stderr={a['stderr_dist']:.3g} eps={ecfg.epsilon:g}")
    return _finish(report, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asgd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="directory for reports and traces")
        p.add_argument("--format", default="csv,json,markdown", help="comma-separated: csv, json, markdown")
        p.set_defaults(func=func)
        return p

    add("bounds", cmd_bounds, "print every bound, the tuned step and the feasibility margin")
    add("run", cmd_run, "one threaded epoch")
    p = add("simulate", cmd_simulate, "one simulated epoch with invariant checks")
    p.add_argument("--strategy", help="overrides sim.strategy")
    p = add("slowdown", cmd_slowdown, "stale-replay slowdown versus sequential SGD", config=False)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--tau-list", default="29,58,116")
    p.add_argument("--trials", type=int, default=1)
    p = add("mc-fail-prob", cmd_mc_fail_prob, "Monte-Carlo failure probability against a bound")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--variant", default="async", choices=[v.value for v in BoundVariant])
    p.add_argument("--d", type=int, default=1, help="dimension for the built-in setup (no --config)")
    p = add("invariants", cmd_invariants, "schedule invariant sweep", config=False)
    p.add_argument("--sweep", default="default", choices=["default", "quick", "sequential"])
    p.add_argument("--with-fixture", action="store_true", help="also check the injected illegal trace")
    p = add("fullsgd", cmd_fullsgd, "epoch-halving SGD on real threads")
    p.add_argument("--trials", type=int, default=200)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProblemError, FeasibilityViolated, InvalidStepSize) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
