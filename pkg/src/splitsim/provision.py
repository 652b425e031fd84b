"""Design-space search over machine counts and types: find SLO-compliant
clusters optimizing throughput, cost, or power under iso-power, iso-cost,
or iso-throughput framings.

Each candidate (prompt_count, token_count) point is scored by short
fixed-seed simulations of a synthesized workload; a point passes only if
all nine SLO constraints hold on every seed.  Cost and power are the dot
product of machine counts with the per-design rates normalized to a
DGX-A100.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

from .cluster import ClusterConfig, normalize_design
from .engine import SloTable, Simulator, reference_latencies, check_slo
from .errors import ConfigurationError, ValidationError
from .machine import SchedulerConfig
from .perf import PerfModel, get_calibration
from .trace import SizeDistribution, generate_trace

# (cost, power) per machine, normalized to DGX-A100 = 1.  Token-side H100
# carries the higher serving rate; the capped variant trades nothing on
# cost but drops provisioned power to 1.23x.
_COST_POWER = {
    ("Baseline-A100", "prompt"): (1.0, 1.0),
    ("Baseline-A100", "token"): (1.0, 1.0),
    ("Baseline-H100", "prompt"): (2.35, 1.75),
    ("Baseline-H100", "token"): (2.35, 1.75),
    ("Splitwise-AA", "prompt"): (1.0, 1.0),
    ("Splitwise-AA", "token"): (1.0, 1.0),
    ("Splitwise-HH", "prompt"): (2.35, 1.75),
    ("Splitwise-HH", "token"): (2.5, 1.75),
    ("Splitwise-HHcap", "prompt"): (2.35, 1.75),
    ("Splitwise-HHcap", "token"): (2.5, 1.23),
    ("Splitwise-HA", "prompt"): (2.35, 1.75),
    ("Splitwise-HA", "token"): (1.0, 1.0),
}


def machine_cost_power(design: str, role: str) -> tuple[float, float]:
    """(cost, power) of one machine of the given role in the given design."""
    design = normalize_design(design)
    if role not in ("prompt", "token"):
        raise ConfigurationError(f"unknown role {role!r}")
    return _COST_POWER[(design, role)]


def design_cost_power(design: str, prompt_count: int, token_count: int) -> tuple[float, float]:
    pc, pp = machine_cost_power(design, "prompt")
    tc, tp = machine_cost_power(design, "token")
    return (prompt_count * pc + token_count * tc,
            prompt_count * pp + token_count * tp)


def budget_max_count(design: str, budget: float, kind: str = "power") -> int:
    """Largest single-pool machine count fitting a power or cost budget."""
    cost, power = machine_cost_power(design, "prompt")
    rate = power if kind == "power" else cost
    return int(math.floor(budget / rate + 1e-9))


@dataclass
class Workload:
    """Synthetic workload description used to drive search simulations."""

    prompt_dist: SizeDistribution
    output_dist: SizeDistribution
    llm: str = "llama2-70b"


@dataclass
class DesignPoint:
    design: str
    prompt_count: int
    token_count: int
    max_rps: float
    cost: float
    power: float
    slo_pass: bool

    @property
    def total_machines(self):
        return self.prompt_count + self.token_count


@dataclass
class SearchSpec:
    design: str
    objective: str                 # max_throughput | min_cost | min_power
    constraint: str                # power_budget | cost_budget | throughput_target
    budget: float
    prompt_counts: list[int]
    token_counts: list[int]
    workload: Workload
    slo: SloTable = field(default_factory=SloTable)
    trace_duration: float = 120.0
    seeds: tuple = (1, 2, 3)
    sched: SchedulerConfig = field(default_factory=SchedulerConfig)

    def __post_init__(self):
        self.design = normalize_design(self.design)
        if self.objective not in ("max_throughput", "min_cost", "min_power"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.constraint not in ("power_budget", "cost_budget", "throughput_target"):
            raise ConfigurationError(f"unknown constraint {self.constraint!r}")
        if self.objective == "max_throughput" and self.constraint == "throughput_target":
            raise ConfigurationError("throughput cannot be both objective and constraint")
        if not self.prompt_counts:
            raise ConfigurationError("empty prompt count range")


def _perf_models_for(config: ClusterConfig, workload: Workload) -> dict[str, PerfModel]:
    return {mt: get_calibration(workload.llm, mt)
            for mt in {config.prompt_type, config.token_type}}


def slo_pass_at_rate(design: str, prompt_count: int, token_count: int,
                     workload: Workload, rate: float, duration: float = 120.0,
                     seeds=(1, 2, 3), slo: SloTable | None = None,
                     sched: SchedulerConfig | None = None) -> bool:
    """True iff all nine SLOs pass on every seed at the given arrival rate."""
    slo = slo or SloTable()
    config = ClusterConfig(design, prompt_count, token_count, llm=workload.llm,
                           sched=sched or SchedulerConfig())
    models = _perf_models_for(config, workload)
    reference = get_calibration(workload.llm, "A100")
    for seed in seeds:
        trace = generate_trace(workload.prompt_dist, workload.output_dist,
                               rate, duration, seed)
        if not trace.requests:
            continue
        config_i = ClusterConfig(design, prompt_count, token_count, llm=workload.llm,
                                 sched=sched or SchedulerConfig())
        try:
            result = Simulator(config_i, models, trace, seed=seed,
                               reference_model=reference, record_log=False,
                               tbt_mode="pooled").run()
        except RuntimeError:
            return False  # non-terminating at this load
        refs = {r.request.id: reference_latencies(r.request, reference)
                for r in result.report.records}
        verdict = check_slo(result.report, slo, refs)
        if not verdict["pass"]:
            return False
    return True


def max_throughput(design: str, prompt_count: int, token_count: int,
                   workload: Workload, duration: float = 120.0, seeds=(1, 2, 3),
                   slo: SloTable | None = None, sched: SchedulerConfig | None = None,
                   resolution: float = 0.02) -> float:
    """Highest SLO-passing arrival rate, via geometric ramp then bisection."""

    def passes(rate):
        return slo_pass_at_rate(design, prompt_count, token_count, workload,
                                rate, duration, seeds, slo, sched)

    total = prompt_count + max(token_count, 1)
    rate = max(0.25, 0.2 * total)
    tries = 0
    while not passes(rate):
        rate /= 2.0
        tries += 1
        if rate < 0.01 or tries > 12:
            return 0.0
    lo = rate
    hi = None
    while hi is None:
        nxt = lo * 1.5
        if passes(nxt):
            lo = nxt
            if lo > 1e5:
                return lo
        else:
            hi = nxt
    while (hi - lo) / lo > resolution:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class SearchResult:
    points: list[DesignPoint]
    pareto: list[DesignPoint]
    optimum: DesignPoint | None
    infeasible_reason: str | None = None


def _pareto_front(points: list[DesignPoint]) -> list[DesignPoint]:
    """Non-dominated set in (max_rps, -cost, -power) over SLO-passing points."""
    passing = [p for p in points if p.slo_pass]
    front = []
    for p in passing:
        dominated = any(
            q is not p
            and q.max_rps >= p.max_rps and q.cost <= p.cost and q.power <= p.power
            and (q.max_rps > p.max_rps or q.cost < p.cost or q.power < p.power)
            for q in passing)
        if not dominated:
            front.append(p)
    return front


def search(spec: SearchSpec) -> SearchResult:
    """Evaluate the count grid, filter by constraint, optimize the objective."""
    from .cluster import DESIGNS
    baseline = DESIGNS[spec.design][2]
    token_counts = [0] if baseline else list(spec.token_counts)
    if not baseline and not token_counts:
        raise ConfigurationError("empty token count range")

    points: list[DesignPoint] = []
    for p in spec.prompt_counts:
        for t in token_counts:
            if p + t < 1 or (not baseline and (p < 1 or t < 1)):
                continue
            cost, power = design_cost_power(spec.design, p, t)
            if spec.constraint == "power_budget" and power > spec.budget + 1e-9:
                continue
            if spec.constraint == "cost_budget" and cost > spec.budget + 1e-9:
                continue
            if spec.constraint == "throughput_target":
                ok = slo_pass_at_rate(spec.design, p, t, spec.workload, spec.budget,
                                      spec.trace_duration, spec.seeds, spec.slo, spec.sched)
                rps = spec.budget if ok else 0.0
            else:
                rps = max_throughput(spec.design, p, t, spec.workload,
                                     spec.trace_duration, spec.seeds, spec.slo, spec.sched)
                ok = rps > 0.0
            points.append(DesignPoint(spec.design, p, t, rps, cost, power, ok))

    feasible = [pt for pt in points if pt.slo_pass]
    if not feasible:
        return SearchResult(points, [], None,
                            infeasible_reason=f"no grid point satisfies {spec.constraint}"
                                              f"={spec.budget} under the SLOs")

    if spec.objective == "max_throughput":
        key = lambda pt: (-pt.max_rps, pt.total_machines, pt.cost, pt.power)
    elif spec.objective == "min_cost":
        key = lambda pt: (pt.cost, pt.total_machines, pt.power)
    else:
        key = lambda pt: (pt.power, pt.total_machines, pt.cost)
    optimum = min(feasible, key=key)
    return SearchResult(points, _pareto_front(points), optimum)


def summarize(points: list[DesignPoint], baseline: DesignPoint) -> list[dict]:
    """Relative report: every point's metrics divided by the baseline's."""
    for name, val in (("max_rps", baseline.max_rps), ("cost", baseline.cost),
                      ("power", baseline.power), ("machines", baseline.total_machines)):
        if val == 0:
            raise ValidationError(f"baseline {name} is zero")
    out = []
    for p in points:
        out.append({
            "design": p.design,
            "prompt_count": p.prompt_count,
            "token_count": p.token_count,
            "throughput_x": p.max_rps / baseline.max_rps,
            "cost_x": p.cost / baseline.cost,
            "power_x": p.power / baseline.power,
            "machines_x": p.total_machines / baseline.total_machines,
        })
    return out


RESULTS_CSV_HEADER = "design,prompt_count,token_count,max_rps,cost,power,slo_pass"


def results_csv(points: list[DesignPoint], optimum: DesignPoint | None = None) -> str:
    buf = io.StringIO()
    buf.write(RESULTS_CSV_HEADER + "\n")
    for p in points:
        buf.write(f"{p.design},{p.prompt_count},{p.token_count},{p.max_rps:.4f},"
                  f"{p.cost:.4f},{p.power:.4f},{'pass' if p.slo_pass else 'fail'}\n")
    if optimum is not None:
        buf.write(f"# optimum,{optimum.prompt_count},{optimum.token_count},"
                  f"{optimum.max_rps:.4f},{optimum.cost:.4f},{optimum.power:.4f},pass\n")
    return buf.getvalue()
