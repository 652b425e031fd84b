#!/usr/bin/env python3
"""Search machine counts for a cluster design under a power budget.

Sweeps a small grid of (prompt machines, token machines) for a
phase-split design, finds the maximum SLO-compliant request rate at
each point, and prints the grid, the Pareto-efficient points, and the
optimum alongside an equal-power aggregated baseline.
"""

import argparse

from splitsim import (
    PRESETS,
    SearchSpec,
    Workload,
    budget_max_count,
    max_throughput,
    search,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--design", default="Splitwise-AA")
    parser.add_argument("--power-budget", type=float, default=8.0)
    parser.add_argument("--preset", default="conversation")
    parser.add_argument("--duration", type=float, default=120.0)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    workload = Workload(PRESETS[args.preset]["prompt"],
                        PRESETS[args.preset]["output"])
    counts = list(range(1, int(args.power_budget) + 1))
    spec = SearchSpec(design=args.design, objective="max_throughput",
                      constraint="power_budget", budget=args.power_budget,
                      prompt_counts=counts, token_counts=counts,
                      workload=workload, trace_duration=args.duration,
                      seeds=(args.seed,))
    result = search(spec)

    print(f"{args.design} under power budget {args.power_budget} "
          f"({args.preset} workload):")
    for p in sorted(result.points, key=lambda p: (p.prompt_count, p.token_count)):
        mark = " <- pareto" if p in result.pareto else ""
        print(f"  {p.prompt_count}p/{p.token_count}t  "
              f"max rate {p.max_rps:6.2f} req/s  cost {p.cost:5.2f}  "
              f"power {p.power:5.2f}{mark}")

    best = result.optimum
    if best is None:
        print(f"no feasible point: {result.infeasible_reason}")
        return

    n = budget_max_count("Baseline-A100", args.power_budget, "power")
    base_rps = max_throughput("Baseline-A100", n, 0, workload,
                              duration=args.duration, seeds=(args.seed,))
    print(f"\noptimum: {best.prompt_count}p/{best.token_count}t at "
          f"{best.max_rps:.2f} req/s")
    print(f"equal-power baseline: {n} A100 machines at {base_rps:.2f} req/s")
    if base_rps > 0:
        print(f"throughput ratio: {best.max_rps / base_rps:.2f}x")


if __name__ == "__main__":
    main()
