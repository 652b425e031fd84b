"""Deterministic event-driven simulation core.

Events are processed in (time, sequence) order; the sequence number breaks
ties by insertion, so identical inputs replay to byte-identical event logs.
The simulation clock runs in milliseconds: iteration and transfer latencies
are integer-valued ms in the calibration presets, so event times accumulate
without floating-point drift (trace arrivals, given in seconds, are
converted once on entry).
The engine wires the request lifecycle: arrival -> JSQ routing -> prompt
iterations -> KV-cache transfer -> token iterations -> completion, and
extracts TTFT/TBT/E2E metrics plus the nine-way SLO verdict against an
unbatched reference machine.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field

from .cluster import Cluster, ClusterConfig
from .errors import ValidationError
from .machine import PROMPT, TOKEN, Machine, Task
from .perf import PerfModel
from .trace import Request, Trace
from .transfer import plan_transfer

ARRIVAL = "request_arrival"
ITERATION = "iteration_complete"
TRANSFER = "transfer_complete"
MAINTENANCE = "pool_maintenance"


def percentile(samples, p: float):
    """Nearest-rank percentile: sorted value at index ceil(p*n) - 1."""
    if len(samples) == 0:
        raise ValidationError("percentile of empty sample set")
    if not 0.0 < p <= 1.0:
        raise ValidationError("p must be in (0, 1]")
    ordered = sorted(samples)
    return ordered[max(0, math.ceil(p * len(ordered)) - 1)]


@dataclass
class SloTable:
    """Slowdown multipliers vs. an uncontended reference, per percentile."""

    ttft: tuple = (2.0, 3.0, 6.0)
    tbt: tuple = (1.25, 1.5, 5.0)
    e2e: tuple = (1.25, 1.5, 5.0)
    percentiles: tuple = (0.5, 0.9, 0.99)

    def __post_init__(self):
        for multis in (self.ttft, self.tbt, self.e2e):
            if any(m < 1.0 for m in multis):
                raise ValidationError("SLO multipliers must be >= 1")


def reference_latencies(request: Request, reference_model: PerfModel) -> dict:
    """Closed-form latencies for this request on an unbatched reference."""
    ttft = reference_model.prompt_time(request.prompt_tokens)
    tbt = reference_model.token_iter_time(1)
    return {
        "ttft_ms": ttft,
        "tbt_ms": tbt,
        "e2e_ms": ttft + (request.output_tokens - 1) * tbt,
    }


@dataclass
class RequestRecord:
    request: Request
    prompt_machine: int = -1
    token_machine: int = -1
    first_token_time: float | None = None
    emissions: list[float] = field(default_factory=list)
    completion: float | None = None
    transfer_visible_ms: float = 0.0
    preempt_count: int = 0

    @property
    def ttft_ms(self) -> float:
        return self.first_token_time - self.request.arrival * 1000.0

    @property
    def e2e_ms(self) -> float:
        return self.completion - self.request.arrival * 1000.0

    def tbt_ms(self) -> list[float]:
        return [b - a for a, b in zip(self.emissions, self.emissions[1:])]


@dataclass
class MetricsReport:
    records: list[RequestRecord]
    throughput_rps: float
    utilization: dict[int, float]
    batched_token_time: dict[int, float]  # active batched tokens -> busy ms
    slo: dict | None = None

    def summary(self) -> dict:
        out = {"requests": len(self.records), "throughput_rps": self.throughput_rps}
        if self.records:
            for name, vals in (("ttft_ms", [r.ttft_ms for r in self.records]),
                               ("e2e_ms", [r.e2e_ms for r in self.records])):
                for p in (0.5, 0.9, 0.99):
                    out[f"{name}_p{int(p * 100)}"] = percentile(vals, p)
            gaps = [g for r in self.records for g in r.tbt_ms()]
            if gaps:
                for p in (0.5, 0.9, 0.99):
                    out[f"tbt_ms_p{int(p * 100)}"] = percentile(gaps, p)
        return out


def check_slo(report: MetricsReport, slo: SloTable, references: dict,
              tbt_mode: str = "pooled") -> dict:
    """Evaluate the nine slowdown constraints.

    ``references`` maps request id -> reference_latencies() output.  Ratios
    are computed per request (per token gap for pooled TBT) and then
    percentiled.  Returns per-constraint verdicts plus overall pass.
    """
    ttft_ratios = []
    e2e_ratios = []
    tbt_ratios = []
    for rec in report.records:
        ref = references[rec.request.id]
        ttft_ratios.append(rec.ttft_ms / ref["ttft_ms"])
        e2e_ratios.append(rec.e2e_ms / ref["e2e_ms"])
        gaps = rec.tbt_ms()
        if gaps:
            if tbt_mode == "pooled":
                tbt_ratios.extend(g / ref["tbt_ms"] for g in gaps)
            else:
                tbt_ratios.append(sum(gaps) / len(gaps) / ref["tbt_ms"])
    result = {"constraints": [], "pass": True}
    for metric, ratios, multipliers in (("TTFT", ttft_ratios, slo.ttft),
                                        ("TBT", tbt_ratios, slo.tbt),
                                        ("E2E", e2e_ratios, slo.e2e)):
        for p, mult in zip(slo.percentiles, multipliers):
            observed = percentile(ratios, p) if ratios else 0.0
            ok = observed <= mult
            result["constraints"].append({
                "metric": metric, "percentile": p,
                "observed_ratio": observed, "multiplier": mult, "pass": ok,
            })
            result["pass"] = result["pass"] and ok
    return result


@dataclass
class SimResult:
    report: MetricsReport
    records: dict[int, RequestRecord]
    event_log: list[tuple]
    cluster: Cluster


class Simulator:
    """One simulation run over a single event queue."""

    def __init__(self, config: ClusterConfig, perf_models: dict[str, PerfModel],
                 trace: Trace, seed: int = 0, reference_model: PerfModel | None = None,
                 record_log: bool = True, horizon: float | None = None,
                 tbt_mode: str = "pooled"):
        self.config = config
        self.cluster = Cluster(config, perf_models)
        self.trace = trace
        self.seed = seed
        self.reference_model = reference_model
        self.record_log = record_log
        self.tbt_mode = tbt_mode
        self.horizon = horizon if horizon is not None else trace.duration + 600.0
        self._horizon_ms = self.horizon * 1000.0
        self._heap: list = []
        self._seq = 0
        self._log: list[tuple] = []
        self._dirty: set[int] = set()
        self.records: dict[int, RequestRecord] = {}
        self._completed = 0
        self._prompt_compute_ms: dict[int, float] = {}  # batch id -> prompt ms
        self._batched_token_time: dict[int, float] = {}

    # -- plumbing ----------------------------------------------------------

    def _push(self, time, kind, payload):
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def _emit(self, time, kind, payload: str):
        if self.record_log:
            self._log.append((time, len(self._log), kind, payload))

    def _note_transitions(self, transitions):
        for (t, mid, old, new) in transitions:
            self._emit(t, "pool_transition", f"machine={mid} from={old} to={new}")
            self._dirty.add(mid)

    # -- run loop ----------------------------------------------------------

    def run(self) -> SimResult:
        for req in self.trace.requests:
            self.records[req.id] = RequestRecord(req)
            self._push(req.arrival * 1000.0, ARRIVAL, req.id)
        if self.config.repurpose_enabled and math.isfinite(self.config.repurpose_window_s):
            self._push(self.config.repurpose_window_s * 1000.0, MAINTENANCE, None)

        while self._heap and self._completed < len(self.trace.requests):
            time, seq, kind, payload = heapq.heappop(self._heap)
            if time > self._horizon_ms:
                raise RuntimeError(
                    f"simulation exceeded horizon {self.horizon:.1f}s with "
                    f"{len(self.trace.requests) - self._completed} requests unfinished")
            if kind == ARRIVAL:
                self._on_arrival(time, payload)
            elif kind == ITERATION:
                self._on_iteration(time, payload)
            elif kind == TRANSFER:
                self._on_transfer(time, payload)
            elif kind == MAINTENANCE:
                self._on_maintenance(time)
            self._note_transitions(self.cluster.update_pools(time))
            self._dispatch(time)

        if self._completed < len(self.trace.requests):
            raise RuntimeError("event queue drained with unfinished requests")
        return SimResult(self._build_report(), self.records, self._log, self.cluster)

    def _on_arrival(self, time, rid):
        rec = self.records[rid]
        req = rec.request
        decision = self.cluster.route(rid, time)
        rec.prompt_machine = decision.prompt_machine
        rec.token_machine = decision.token_machine
        self._emit(time, ARRIVAL,
                   f"request={rid} prompt_tokens={req.prompt_tokens} "
                   f"output_tokens={req.output_tokens} "
                   f"prompt_machine={decision.prompt_machine} "
                   f"token_machine={decision.token_machine}")
        machine = self.cluster.machines[decision.prompt_machine]
        task = Task(rid, PROMPT, req.prompt_tokens, time,
                    req.output_tokens, req.output_tokens)
        machine.enqueue(task, time)
        self._emit(time, "task_enqueued",
                   f"machine={machine.id} request={rid} kind=prompt tokens={req.prompt_tokens}")
        self._note_transitions(self.cluster.note_enqueue(machine, PROMPT, time))
        self._dirty.add(machine.id)

    def _on_iteration(self, time, mid):
        machine = self.cluster.machines[mid]
        batch = machine.running
        prompt_ms = self._prompt_compute_ms.pop(id(batch), 0.0)
        events = machine.complete_iteration(batch, time)
        self._emit(time, ITERATION, f"machine={mid}")
        for kind, task in events:
            rec = self.records[task.request_id]
            if kind == "prompt_finished":
                rec.first_token_time = time
                rec.emissions.append(time)
                self._emit(time, "prompt_finished",
                           f"request={task.request_id} machine={mid} tokens={task.tokens}")
                if task.output_tokens > 1:
                    self._start_token_phase(time, rec, prompt_ms)
            elif kind == "token_emitted":
                rec.emissions.append(time)
            elif kind == "request_finished":
                rec.completion = time
                rec.preempt_count = task.preempt_count
                self._completed += 1
                self._emit(time, "request_finished",
                           f"request={task.request_id} machine={mid} kind={task.kind}")
        self._dirty.add(mid)

    def _start_token_phase(self, time, rec: RequestRecord, prompt_ms: float):
        req = rec.request
        if rec.token_machine == rec.prompt_machine:
            self._enqueue_token_task(time, rec)
            return
        perf = self.cluster.machines[rec.prompt_machine].perf
        kv = perf.kv_cache_bytes(req.prompt_tokens)
        plan = plan_transfer(req.prompt_tokens, kv, prompt_ms, self.config.transfer)
        rec.transfer_visible_ms = plan.visible_latency
        self._push(time + plan.visible_latency, TRANSFER, req.id)

    def _on_transfer(self, time, rid):
        rec = self.records[rid]
        self._emit(time, TRANSFER,
                   f"request={rid} visible_ms={rec.transfer_visible_ms:.6f}")
        self._enqueue_token_task(time, rec)

    def _enqueue_token_task(self, time, rec: RequestRecord):
        req = rec.request
        machine = self.cluster.machines[rec.token_machine]
        task = Task(req.id, TOKEN, req.prompt_tokens + 1, time,
                    req.output_tokens, req.output_tokens - 1)
        machine.enqueue(task, time)
        self._emit(time, "task_enqueued",
                   f"machine={machine.id} request={req.id} kind=token tokens={task.tokens}")
        self._note_transitions(self.cluster.note_enqueue(machine, TOKEN, time))
        self._dirty.add(machine.id)

    def _on_maintenance(self, time):
        window_ms = self.config.repurpose_window_s * 1000.0
        for (t, mid, old, new) in self.cluster.repurpose(time, window_ms):
            self._emit(t, MAINTENANCE, f"machine={mid} repurposed {old}->{new}")
            self._dirty.add(mid)
        if self._completed < len(self.trace.requests):
            self._push(time + window_ms, MAINTENANCE, None)

    def _dispatch(self, time):
        for mid in sorted(self._dirty):
            machine = self.cluster.machines[mid]
            if not machine.is_idle() or not machine.has_work():
                continue
            batch = machine.form_batch(time)
            if batch is None:
                continue
            machine.running = batch
            duration = batch.iteration_time  # ms
            machine.busy_until = time + duration
            machine.busy_time += duration
            active = sum(t.tokens for t in batch.prompt_tasks) + len(batch.token_tasks)
            self._batched_token_time[active] = self._batched_token_time.get(active, 0.0) + duration
            if batch.prompt_tasks:
                self._prompt_compute_ms[id(batch)] = machine.perf.prompt_time(
                    sum(t.tokens for t in batch.prompt_tasks))
            self._assert_memory(machine)
            self._push(time + duration, ITERATION, mid)
            if self.record_log:
                prompts = ",".join(str(t.request_id) for t in batch.prompt_tasks)
                tokens = ",".join(str(t.request_id) for t in batch.token_tasks)
                self._emit(time, "batch_started",
                           f"machine={mid} kind={batch.kind} prompts=[{prompts}] "
                           f"tokens=[{tokens}] iter_ms={batch.iteration_time:.6f}")
        self._dirty.clear()

    def _assert_memory(self, machine: Machine):
        if machine.memory_used() > machine.perf.memory_capacity + 1e-6:
            raise RuntimeError(
                f"machine {machine.id} memory {machine.memory_used():.3e} exceeds "
                f"capacity {machine.perf.memory_capacity:.3e}")

    # -- reporting ---------------------------------------------------------

    def _build_report(self) -> MetricsReport:
        records = [self.records[r.id] for r in self.trace.requests]
        makespan = max((r.completion for r in records), default=0.0)  # ms
        throughput = len(records) / (makespan / 1000.0) if makespan > 0 else 0.0
        utilization = {m.id: (m.busy_time / makespan if makespan > 0 else 0.0)
                       for m in self.cluster.machines.values()}
        report = MetricsReport(records, throughput, utilization,
                               dict(sorted(self._batched_token_time.items())))
        if self.reference_model is not None and records:
            refs = {r.request.id: reference_latencies(r.request, self.reference_model)
                    for r in records}
            report.slo = check_slo(report, SloTable(), refs, self.tbt_mode)
        return report


def run(config: ClusterConfig, perf_models: dict[str, PerfModel], trace: Trace,
        seed: int = 0, **kwargs) -> SimResult:
    """Convenience wrapper: build a Simulator and run it."""
    return Simulator(config, perf_models, trace, seed, **kwargs).run()


# -- CSV emission ----------------------------------------------------------

REQUEST_CSV_HEADER = ("request_id,arrival_s,ttft_ms,e2e_ms,prompt_machine,"
                      "token_machine,transfer_visible_ms,preempt_count")


def requests_csv(result: SimResult) -> str:
    buf = io.StringIO()
    buf.write(REQUEST_CSV_HEADER + "\n")
    for rec in result.report.records:
        buf.write(f"{rec.request.id},{rec.request.arrival:.6f},{rec.ttft_ms:.6f},"
                  f"{rec.e2e_ms:.6f},{rec.prompt_machine},{rec.token_machine},"
                  f"{rec.transfer_visible_ms:.6f},{rec.preempt_count}\n")
    return buf.getvalue()


def tbt_csv(result: SimResult) -> str:
    buf = io.StringIO()
    buf.write("request_id,gap_index,tbt_ms\n")
    for rec in result.report.records:
        for i, gap in enumerate(rec.tbt_ms()):
            buf.write(f"{rec.request.id},{i},{gap:.6f}\n")
    return buf.getvalue()


def summary_csv(result: SimResult) -> str:
    buf = io.StringIO()
    buf.write("metric,percentile,observed_ratio,multiplier,verdict\n")
    if result.report.slo is not None:
        for c in result.report.slo["constraints"]:
            buf.write(f"{c['metric']},P{int(c['percentile'] * 100)},"
                      f"{c['observed_ratio']:.6f},{c['multiplier']},"
                      f"{'pass' if c['pass'] else 'fail'}\n")
    return buf.getvalue()


def event_log_csv(result: SimResult) -> str:
    buf = io.StringIO()
    buf.write("time_ms,seq,kind,payload\n")
    for (t, seq, kind, payload) in result.event_log:
        buf.write(f"{t:.9f},{seq},{kind},{payload}\n")
    return buf.getvalue()
