"""Command-line front end.

Subcommands: ``gen-trace`` (synthesize a trace CSV), ``simulate`` (run one
cluster simulation and emit metric CSVs), ``provision`` (design-space
search), ``fit-model`` (fit a performance model from a profile CSV), and
``report`` (re-summarize existing metric CSVs).  ``SPLITSIM_SEED`` sets
the global seed default.  Exit codes: 0 success (all SLOs pass for
``simulate``), 1 SLO failure / infeasible search, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import config as cfgmod
from . import engine, provision
from .cluster import ClusterConfig
from .engine import Simulator, percentile
from .errors import SplitsimError
from .machine import SchedulerConfig
from .perf import fit_piecewise_linear, get_calibration, parse_profile_csv, export_profile_csv
from .trace import PRESETS, SizeDistribution, generate_trace, parse_trace, serialize_trace, trace_stats
from .transfer import TransferConfig


def _default_seed():
    return int(os.environ.get("SPLITSIM_SEED", "0"))


def _dists_from_config(cfg, prefix):
    kind = cfg[f"{prefix}.kind"]
    lo, hi = cfg[f"{prefix}.min"], cfg[f"{prefix}.max"]
    if kind == "lognormal":
        return SizeDistribution.lognormal(cfg[f"{prefix}.mu"], cfg[f"{prefix}.sigma"], lo, hi)
    if kind == "bimodal-lognormal":
        return SizeDistribution.bimodal_lognormal(
            cfg[f"{prefix}.weight2"], cfg[f"{prefix}.mu"], cfg[f"{prefix}.sigma"],
            cfg[f"{prefix}.mu2"], cfg[f"{prefix}.sigma2"], lo, hi)
    raise SplitsimError(f"config cannot express distribution kind {kind!r}")


def _workload_dists(args, cfg):
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise SplitsimError(f"unknown preset {args.preset!r}; "
                                f"choose from {sorted(PRESETS)}")
        return PRESETS[args.preset]["prompt"], PRESETS[args.preset]["output"]
    return _dists_from_config(cfg, "prompt_dist"), _dists_from_config(cfg, "output_dist")


def cmd_gen_trace(args) -> int:
    cfg = cfgmod.load_config(args.config)
    prompt_dist, output_dist = _workload_dists(args, cfg)
    trace = generate_trace(prompt_dist, output_dist, args.rate, args.duration, args.seed)
    with open(args.output, "w") as fh:
        fh.write(serialize_trace(trace))
    if not trace.requests:
        print(f"warning: empty trace (rate={args.rate}); wrote header only")
        return 0
    stats = trace_stats(trace)
    print(f"wrote {stats['count']} requests to {args.output}")
    print(f"  median/p90 prompt tokens: {stats['median_prompt_tokens']}/"
          f"{stats['p90_prompt_tokens']}")
    print(f"  median/p90 output tokens: {stats['median_output_tokens']}/"
          f"{stats['p90_output_tokens']}")
    print(f"  mean rate: {stats['mean_rate']:.3f} req/s")
    return 0


def _cluster_config(args, cfg) -> ClusterConfig:
    design = args.design or cfg["cluster.design"]
    sched = SchedulerConfig(
        prompt_token_cap=cfg["mls.prompt_token_cap"],
        max_preemptions=cfg["mls.max_preemptions"],
        aging_rate=cfg["mls.aging_rate"],
        queue_threshold_tokens=cfg["cls.queue_threshold_tokens"],
        mixing_rule=cfg["mls.mixing_rule"],
    )
    transfer = None
    if cfg["transfer.bandwidth_gbps"] is not None:
        llm = args.llm or cfg["run.llm"]
        transfer = TransferConfig(
            bandwidth=cfg["transfer.bandwidth_gbps"] * 1e9,
            mode_threshold_tokens=cfg["transfer.threshold_tokens"] or 512,
            layerwise_constant_ms=cfg["transfer.layerwise_constant_ms"] or 5.0,
            num_layers=80 if llm == "llama2-70b" else 70,
        )
    return ClusterConfig(
        design,
        args.prompt_machines if args.prompt_machines is not None
        else cfg["cluster.prompt_machines"],
        args.token_machines if args.token_machines is not None
        else cfg["cluster.token_machines"],
        llm=args.llm or cfg["run.llm"],
        sched=sched,
        transfer=transfer,
        repurpose_window_s=cfg["cls.repurpose_window_s"],
        repurpose_fraction=cfg["cls.repurpose_fraction"],
    )


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    trace_path = args.trace or cfg["run.trace"]
    if trace_path is None:
        raise SplitsimError("simulate needs a trace (--trace or run.trace)")
    trace = parse_trace(trace_path)
    cluster_config = _cluster_config(args, cfg)
    llm = cluster_config.llm
    if args.profile:
        samples = parse_profile_csv(args.profile)
        types_present = {s.machine_type for s in samples}
        needed = {cluster_config.prompt_type, cluster_config.token_type}
        missing = needed - types_present
        if missing:
            raise SplitsimError(f"profile {args.profile} has no samples for "
                                f"machine type(s): {sorted(missing)}")
        models = {}
        for mt in needed:
            group = [s for s in samples if s.machine_type == mt]
            models[mt], _ = fit_piecewise_linear(group)
    else:
        models = {mt: get_calibration(llm, mt)
                  for mt in {cluster_config.prompt_type, cluster_config.token_type}}
    reference = get_calibration(llm, "A100")
    result = Simulator(cluster_config, models, trace, seed=args.seed,
                       reference_model=reference, record_log=args.event_log).run()

    outdir = args.output_dir or cfg["run.output_dir"]
    os.makedirs(outdir, exist_ok=True)
    header = (f"# design={cluster_config.design} "
              f"prompt_machines={cluster_config.prompt_machines} "
              f"token_machines={cluster_config.token_machines} llm={llm} "
              f"seed={args.seed}\n")
    with open(os.path.join(outdir, "requests.csv"), "w") as fh:
        fh.write(header)
        fh.write(engine.requests_csv(result))
    with open(os.path.join(outdir, "tbt.csv"), "w") as fh:
        fh.write(engine.tbt_csv(result))
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write(header)
        fh.write(engine.summary_csv(result))
    if args.event_log:
        with open(os.path.join(outdir, "events.csv"), "w") as fh:
            fh.write(engine.event_log_csv(result))

    slo = result.report.slo
    if slo is None:  # empty trace
        print("empty trace: nothing simulated")
        return 0
    for c in slo["constraints"]:
        print(f"{c['metric']:>4} P{int(c['percentile'] * 100):<3} "
              f"ratio={c['observed_ratio']:.3f} limit={c['multiplier']} "
              f"{'pass' if c['pass'] else 'fail'}")
    print(f"overall: {'pass' if slo['pass'] else 'fail'} "
          f"({len(result.report.records)} requests, "
          f"{result.report.throughput_rps:.2f} req/s)")
    return 0 if slo["pass"] else 1


def _parse_counts(text: str) -> list[int]:
    """Count ranges: '1,2,4' or 'start:stop[:step]' (stop inclusive)."""
    if ":" in text:
        parts = [int(x) for x in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(x) for x in text.split(",")]


def cmd_provision(args) -> int:
    cfg = cfgmod.load_config(args.config)
    constraints = [c for c in (("power_budget", args.power_budget),
                               ("cost_budget", args.cost_budget),
                               ("throughput_target", args.throughput)) if c[1] is not None]
    if len(constraints) != 1:
        raise SplitsimError("provision needs exactly one of "
                            "--power-budget / --cost-budget / --throughput")
    constraint, budget = constraints[0]
    prompt_dist, output_dist = _workload_dists(args, cfg)
    workload = provision.Workload(prompt_dist, output_dist, llm=args.llm or cfg["run.llm"])
    spec = provision.SearchSpec(
        design=args.design, objective=args.objective, constraint=constraint,
        budget=budget, prompt_counts=_parse_counts(args.prompt_counts),
        token_counts=_parse_counts(args.token_counts), workload=workload,
        trace_duration=args.duration, seeds=tuple(args.seeds),
    )
    result = provision.search(spec)

    outdir = args.output_dir or cfg["run.output_dir"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "results.csv"), "w") as fh:
        fh.write(provision.results_csv(result.points, result.optimum))
    with open(os.path.join(outdir, "pareto.csv"), "w") as fh:
        fh.write(provision.results_csv(result.pareto))

    if result.optimum is None:
        print(f"infeasible: {result.infeasible_reason}")
        return 1
    o = result.optimum
    print(f"optimum: {o.design} prompt={o.prompt_count} token={o.token_count} "
          f"max_rps={o.max_rps:.2f} cost={o.cost:.2f} power={o.power:.2f}")
    return 0


def cmd_fit_model(args) -> int:
    samples = parse_profile_csv(args.profile)
    model, report = fit_piecewise_linear(samples, knot_budget=args.knot_budget,
                                         holdout_fraction=args.holdout, seed=args.seed)
    with open(args.output, "w") as fh:
        fh.write(export_profile_csv(model))
    print(f"fitted {model.machine_type}/{model.llm}: "
          f"{len(model.prompt_knots[0])} prompt knots, "
          f"{len(model.token_knots[0])} token knots")
    print(f"train MAPE: prompt {report.train_mape_prompt:.2f}% "
          f"token {report.train_mape_token:.2f}%")
    if report.holdout_mape is not None:
        print(f"holdout MAPE: {report.holdout_mape:.2f}%")
    return 0


def cmd_report(args) -> int:
    ttft, e2e = [], []
    with open(args.requests) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("request_id"):
                continue
            parts = line.strip().split(",")
            ttft.append(float(parts[2]))
            e2e.append(float(parts[3]))
    gaps = []
    if args.tbt:
        with open(args.tbt) as fh:
            for line in fh:
                if line.startswith("request_id"):
                    continue
                gaps.append(float(line.strip().split(",")[2]))
    if not ttft:
        print("no requests in input")
        return 0
    print(f"{len(ttft)} requests")
    for name, vals in (("TTFT", ttft), ("E2E", e2e), ("TBT", gaps)):
        if not vals:
            continue
        p50, p90, p99 = (percentile(vals, p) for p in (0.5, 0.9, 0.99))
        print(f"{name:>4} ms: P50={p50:.1f} P90={p90:.1f} P99={p99:.1f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitsim",
                                     description="Phase-split LLM serving simulator")
    parser.add_argument("--config", default=None, help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    p = sub.add_parser("gen-trace", help="synthesize a request trace CSV")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--output", default="trace.csv")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("simulate", help="run one cluster simulation")
    p.add_argument("--trace", default=None)
    p.add_argument("--design", default=None)
    p.add_argument("--prompt-machines", type=int, default=None)
    p.add_argument("--token-machines", type=int, default=None)
    p.add_argument("--llm", default=None)
    p.add_argument("--profile", default=None, help="fit models from this profile CSV")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--event-log", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("provision", help="search cluster designs")
    p.add_argument("--design", required=True)
    p.add_argument("--objective", required=True,
                   choices=("max_throughput", "min_cost", "min_power"))
    p.add_argument("--power-budget", type=float, default=None)
    p.add_argument("--cost-budget", type=float, default=None)
    p.add_argument("--throughput", type=float, default=None)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--llm", default=None)
    p.add_argument("--prompt-counts", default="1:8")
    p.add_argument("--token-counts", default="1:4")
    p.add_argument("--duration", type=float, default=120.0)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("fit-model", help="fit a performance model from profiles")
    p.add_argument("--profile", required=True)
    p.add_argument("--knot-budget", type=int, default=32)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--output", default="model.csv")
    p.set_defaults(func=cmd_fit_model)

    p = sub.add_parser("report", help="re-summarize existing metric CSVs")
    p.add_argument("--requests", required=True)
    p.add_argument("--tbt", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except SplitsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
