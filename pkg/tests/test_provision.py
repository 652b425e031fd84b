import pytest

from splitsim import (
    ConfigurationError,
    DesignPoint,
    PRESETS,
    SearchSpec,
    ValidationError,
    Workload,
    budget_max_count,
    design_cost_power,
    machine_cost_power,
    max_throughput,
    search,
    slo_pass_at_rate,
)
from splitsim.provision import _pareto_front, results_csv, summarize


def conversation_workload():
    return Workload(PRESETS["conversation"]["prompt"],
                    PRESETS["conversation"]["output"])


class TestCostPower:
    def test_table(self):
        assert machine_cost_power("Baseline-A100", "prompt") == (1.0, 1.0)
        assert machine_cost_power("Baseline-H100", "token") == (2.35, 1.75)
        assert machine_cost_power("Splitwise-HH", "prompt") == (2.35, 1.75)
        assert machine_cost_power("Splitwise-HH", "token") == (2.5, 1.75)
        assert machine_cost_power("Splitwise-HHcap", "token") == (2.5, 1.23)
        assert machine_cost_power("Splitwise-HA", "token") == (1.0, 1.0)

    def test_design_totals(self):
        cost, power = design_cost_power("Splitwise-HH", 27, 3)
        assert cost == pytest.approx(27 * 2.35 + 3 * 2.5)
        assert power == pytest.approx(30 * 1.75)

    def test_bad_role(self):
        with pytest.raises(ConfigurationError):
            machine_cost_power("Splitwise-HH", "io")


class TestBudgetCount:
    def test_iso_power_forty_h100(self):
        # 40 H100 machines provision 40 * 1.75 = 70 power units; at 1.0 per
        # A100 machine that budget fits exactly 70 machines
        budget = 40 * 1.75
        assert budget_max_count("Baseline-A100", budget, "power") == 70

    def test_iso_cost(self):
        budget = 4 * 2.35
        assert budget_max_count("Baseline-A100", budget, "cost") == 9

    def test_exact_boundary(self):
        assert budget_max_count("Baseline-H100", 1.75, "power") == 1
        assert budget_max_count("Baseline-H100", 1.74, "power") == 0


class TestSearchSpec:
    def _spec(self, **kw):
        base = dict(design="Splitwise-AA", objective="max_throughput",
                    constraint="power_budget", budget=4.0,
                    prompt_counts=[1, 2], token_counts=[1, 2],
                    workload=conversation_workload())
        base.update(kw)
        return SearchSpec(**base)

    def test_objective_validation(self):
        with pytest.raises(ConfigurationError):
            self._spec(objective="min_latency")

    def test_constraint_validation(self):
        with pytest.raises(ConfigurationError):
            self._spec(constraint="gpu_budget")

    def test_throughput_both_sides_rejected(self):
        with pytest.raises(ConfigurationError):
            self._spec(objective="max_throughput", constraint="throughput_target")

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            self._spec(prompt_counts=[])


class TestThroughputSearch:
    def test_single_machine_feasible(self):
        w = conversation_workload()
        rate = max_throughput("Baseline-A100", 1, 0, w, duration=60.0, seeds=(1,))
        assert rate > 0.0
        assert slo_pass_at_rate("Baseline-A100", 1, 0, w, rate,
                                duration=60.0, seeds=(1,))

    def test_monotone_in_rate(self):
        w = conversation_workload()
        rate = max_throughput("Baseline-A100", 1, 0, w, duration=60.0, seeds=(1,))
        assert not slo_pass_at_rate("Baseline-A100", 1, 0, w, rate * 1.8,
                                    duration=60.0, seeds=(1,))

    def test_overload_fails_slo(self):
        w = conversation_workload()
        assert not slo_pass_at_rate("Baseline-A100", 1, 0, w, 50.0,
                                    duration=60.0, seeds=(1,))


class TestPareto:
    def _pt(self, rps, cost, power, ok=True):
        return DesignPoint("Splitwise-AA", 1, 1, rps, cost, power, ok)

    def test_dominated_removed(self):
        a = self._pt(10.0, 5.0, 5.0)
        b = self._pt(8.0, 6.0, 6.0)   # dominated by a
        c = self._pt(12.0, 9.0, 9.0)
        front = _pareto_front([a, b, c])
        assert a in front and c in front and b not in front

    def test_failing_points_excluded(self):
        a = self._pt(10.0, 5.0, 5.0, ok=False)
        assert _pareto_front([a]) == []

    def test_summarize_ratios(self):
        base = self._pt(5.0, 10.0, 10.0)
        out = summarize([self._pt(10.0, 10.0, 10.0)], base)
        assert out[0]["throughput_x"] == pytest.approx(2.0)
        assert out[0]["cost_x"] == pytest.approx(1.0)

    def test_summarize_zero_baseline(self):
        with pytest.raises(ValidationError):
            summarize([], self._pt(0.0, 1.0, 1.0))

    def test_results_csv(self):
        text = results_csv([self._pt(10.0, 5.0, 5.0)])
        lines = text.strip().splitlines()
        assert lines[0] == "design,prompt_count,token_count,max_rps,cost,power,slo_pass"
        assert lines[1].startswith("Splitwise-AA,1,1,10.0000,")


class TestSearch:
    def test_power_budget_filters_grid(self):
        w = conversation_workload()
        spec = SearchSpec(design="Splitwise-AA", objective="max_throughput",
                          constraint="power_budget", budget=3.0,
                          prompt_counts=[1, 2, 3], token_counts=[1, 2, 3],
                          workload=w, trace_duration=60.0, seeds=(1,))
        result = search(spec)
        assert all(p.power <= 3.0 + 1e-9 for p in result.points)
        assert result.optimum is not None
        assert result.optimum.max_rps == max(p.max_rps for p in result.points)

    def test_baseline_grid_is_one_dimensional(self):
        w = conversation_workload()
        spec = SearchSpec(design="Baseline-A100", objective="max_throughput",
                          constraint="power_budget", budget=2.0,
                          prompt_counts=[1, 2], token_counts=[1, 2, 3],
                          workload=w, trace_duration=60.0, seeds=(1,))
        result = search(spec)
        assert all(p.token_count == 0 for p in result.points)
        assert len(result.points) == 2

    def test_infeasible_reported(self):
        w = conversation_workload()
        spec = SearchSpec(design="Splitwise-AA", objective="min_cost",
                          constraint="throughput_target", budget=500.0,
                          prompt_counts=[1], token_counts=[1],
                          workload=w, trace_duration=60.0, seeds=(1,))
        result = search(spec)
        assert result.optimum is None
        assert result.infeasible_reason
        assert result.pareto == []

    def test_min_cost_picks_cheapest_feasible(self):
        w = conversation_workload()
        spec = SearchSpec(design="Splitwise-AA", objective="min_cost",
                          constraint="throughput_target", budget=1.0,
                          prompt_counts=[1, 2], token_counts=[1, 2],
                          workload=w, trace_duration=60.0, seeds=(1,))
        result = search(spec)
        assert result.optimum is not None
        feasible = [p for p in result.points if p.slo_pass]
        assert result.optimum.cost == min(p.cost for p in feasible)
