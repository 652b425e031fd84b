"""Cluster-level scheduling (CLS): machine pools, JSQ routing of each
request to a (prompt, token) machine pair, overflow into the mixed pool,
pool return, and coarse-grained re-purposing.

Queue length for JSQ is the number of pending tokens: queued prompts count
their full prompt size, queued or running token tasks count one each.
Baseline designs keep every machine in a single mixed-batching pool and
always route both phases to the same machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .machine import MIXED, PROMPT, TOKEN, Machine, SchedulerConfig
from .perf import MACHINE_SPECS, PerfModel
from .transfer import TransferConfig, default_transfer_config

# design name -> (prompt machine type, token machine type, baseline?)
DESIGNS = {
    "Baseline-A100": ("A100", "A100", True),
    "Baseline-H100": ("H100", "H100", True),
    "Splitwise-AA": ("A100", "A100", False),
    "Splitwise-HH": ("H100", "H100", False),
    "Splitwise-HHcap": ("H100", "H100cap", False),
    "Splitwise-HA": ("H100", "A100", False),
}


def normalize_design(name: str) -> str:
    for design in DESIGNS:
        if design.lower() == name.lower():
            return design
    raise ConfigurationError(f"unknown design {name!r}; expected one of {sorted(DESIGNS)}")


@dataclass
class ClusterConfig:
    design: str
    prompt_machines: int
    token_machines: int
    llm: str = "llama2-70b"
    sched: SchedulerConfig = field(default_factory=SchedulerConfig)
    transfer: TransferConfig | None = None  # default derived from design
    repurpose_window_s: float = 300.0
    repurpose_fraction: float = 0.5
    repurpose_enabled: bool = False

    def __post_init__(self):
        self.design = normalize_design(self.design)
        if self.prompt_machines < 0 or self.token_machines < 0:
            raise ConfigurationError("machine counts must be >= 0")
        if self.prompt_machines + self.token_machines < 1:
            raise ConfigurationError("cluster needs at least one machine")
        if self.is_baseline and self.token_machines not in (0, self.prompt_machines):
            raise ConfigurationError(
                "baseline designs take a single machine count (prompt_machines)")

    @property
    def is_baseline(self) -> bool:
        return DESIGNS[self.design][2]

    @property
    def prompt_type(self) -> str:
        return DESIGNS[self.design][0]

    @property
    def token_type(self) -> str:
        return DESIGNS[self.design][1]


@dataclass(frozen=True)
class RoutingDecision:
    request_id: int
    prompt_machine: int
    token_machine: int
    decided_at: float


def pending_tokens(machine: Machine) -> int:
    """JSQ queue length: queued prompt sizes plus one per live token task."""
    return machine.pending_token_count


class Cluster:
    """Machine pools plus the routing and pool-maintenance policies."""

    def __init__(self, config: ClusterConfig, perf_models: dict[str, PerfModel]):
        self.config = config
        self.machines: dict[int, Machine] = {}
        ptype, ttype, baseline = DESIGNS[config.design]
        for mt in {ptype, ttype}:
            if mt not in perf_models:
                raise ConfigurationError(f"no performance model for machine type {mt}")
        mid = 0
        if baseline:
            for _ in range(config.prompt_machines):
                self.machines[mid] = Machine(mid, MACHINE_SPECS[ptype], perf_models[ptype],
                                             home_role=MIXED, sched=config.sched,
                                             always_mixed=True)
                mid += 1
        else:
            for _ in range(config.prompt_machines):
                self.machines[mid] = Machine(mid, MACHINE_SPECS[ptype], perf_models[ptype],
                                             home_role=PROMPT, sched=config.sched)
                mid += 1
            for _ in range(config.token_machines):
                self.machines[mid] = Machine(mid, MACHINE_SPECS[ttype], perf_models[ttype],
                                             home_role=TOKEN, sched=config.sched)
                mid += 1
        if not self.machines:
            raise ConfigurationError("cluster has no machines")
        if config.transfer is None and not baseline:
            num_layers = 80 if config.llm == "llama2-70b" else 70
            config.transfer = default_transfer_config(ptype, ttype, num_layers)

    # -- pools -------------------------------------------------------------

    def pool(self, name: str) -> list[Machine]:
        return [m for m in self.machines.values() if m.current_pool == name]

    def pool_partition_ok(self) -> bool:
        return all(m.current_pool in (PROMPT, TOKEN, MIXED) for m in self.machines.values())

    # -- routing -----------------------------------------------------------

    def _argmin(self, machines) -> Machine | None:
        best = None
        for m in machines:
            if best is None or (pending_tokens(m), m.id) < (pending_tokens(best), best.id):
                best = m
        return best

    def _pick(self, role: str):
        """JSQ pick with threshold overflow: own pool, then mixed, then the
        opposite pool (which moves the chosen machine into the mixed pool
        once the opposite-kind task is enqueued)."""
        threshold = self.config.sched.queue_threshold_tokens
        opposite = TOKEN if role == PROMPT else PROMPT
        order = [self.pool(role), self.pool(MIXED), self.pool(opposite)]
        for candidates in order:
            best = self._argmin(candidates)
            if best is not None and pending_tokens(best) <= threshold:
                return best
        # every pool saturated: least-loaded machine able to serve the role
        best = self._argmin(self.pool(role) + self.pool(MIXED) + self.pool(opposite))
        if best is None:
            raise ConfigurationError("no machines available for routing")
        return best

    def route(self, request_id: int, now: float) -> RoutingDecision:
        """Assign both the prompt and token machine at arrival time."""
        if self.config.is_baseline:
            best = self._argmin(self.machines.values())
            return RoutingDecision(request_id, best.id, best.id, now)
        pm = self._pick(PROMPT)
        tm = self._pick(TOKEN)
        return RoutingDecision(request_id, pm.id, tm.id, now)

    # -- pool maintenance --------------------------------------------------

    def note_enqueue(self, machine: Machine, kind: str, now: float) -> list[tuple]:
        """Move a machine into the mixed pool when it takes opposite-kind
        work; returns pool transition records."""
        if machine.always_mixed or machine.current_pool == MIXED:
            return []
        if kind != machine.home_role:
            prev = machine.current_pool
            machine.note_pool_change(MIXED, now)
            return [(now, machine.id, prev, MIXED)]
        return []

    def update_pools(self, now: float) -> list[tuple]:
        """Return mixed-pool machines with no opposite-kind work to their
        home pool; records (time, machine, from, to)."""
        transitions = []
        for m in self.machines.values():
            if m.always_mixed or m.current_pool != MIXED:
                continue
            if not m.has_opposite_work():
                m.note_pool_change(m.home_role, now)
                transitions.append((now, m.id, MIXED, m.home_role))
        return transitions

    def repurpose(self, now: float, window: float) -> list[tuple]:
        """Flip the home role of machines that spent most of the last
        window in the mixed pool; records (time, machine, old_role, new_role)."""
        events = []
        if not math.isfinite(window) or window <= 0:
            return events
        for m in self.machines.values():
            if m.always_mixed:
                continue
            frac = m.mixed_residency(now) / window
            m.reset_mixed_residency(now)
            if frac > self.config.repurpose_fraction:
                old = m.home_role
                m.home_role = TOKEN if old == PROMPT else PROMPT
                if m.current_pool == old:
                    m.note_pool_change(m.home_role, now)
                events.append((now, m.id, old, m.home_role))
        return events
