"""Machine-level scheduling (MLS): per-machine queues, per-iteration batch
formation, memory accounting, and token preemption with aging.

Prompt machines batch prompts FCFS up to a total-token cap; token machines
batch tokens FCFS until memory or the batch-size limit is hit; mixed
machines prioritize prompts and may preempt running token tasks for batch
slots.  Preemption pauses compute but not residency: a parked token task
keeps its KV memory on the machine, so preemption never reclaims memory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import SplitsimError, ValidationError
from .perf import PerfModel, MachineSpec

PROMPT = "prompt"
TOKEN = "token"
MIXED = "mixed"

# Priority bonus that puts a preemption-capped task above any achievable
# aged priority, making it non-preemptable.
NON_PREEMPTABLE_BONUS = 1e18

_task_seq = itertools.count()


@dataclass
class SchedulerConfig:
    prompt_token_cap: int = 2048
    max_preemptions: int = 4
    aging_rate: float = 1.0            # priority per unit of engine-clock waiting
    queue_threshold_tokens: int = 4096  # CLS overflow threshold (2x prompt cap)
    mixing_rule: str = "sum"           # mixed-batch time: "sum" or "max"

    def __post_init__(self):
        if min(self.prompt_token_cap, self.max_preemptions) <= 0:
            raise ValidationError("scheduler config values must be positive")
        if self.aging_rate <= 0 or self.queue_threshold_tokens <= 0:
            raise ValidationError("scheduler config values must be positive")
        if self.mixing_rule not in ("sum", "max"):
            raise ValidationError("mixing_rule must be 'sum' or 'max'")


@dataclass
class Task:
    """One phase of one request on one machine."""

    request_id: int
    kind: str                  # PROMPT or TOKEN
    tokens: int                # prompt size, or context length so far
    enqueue_time: float
    output_tokens: int         # total outputs for the request
    remaining_output: int
    preempt_count: int = 0
    parked: bool = False
    seq: int = field(default_factory=lambda: next(_task_seq))


def aging_priority(task: Task, now: float, config: SchedulerConfig) -> float:
    """Token-task priority: grows with queueing age; capped tasks become
    non-preemptable via a dominating bonus."""
    base = config.aging_rate * (now - task.enqueue_time)
    if task.preempt_count >= config.max_preemptions:
        base += NON_PREEMPTABLE_BONUS
    return base


@dataclass
class Batch:
    prompt_tasks: list[Task]
    token_tasks: list[Task]
    iteration_time: float  # ms

    @property
    def kind(self):
        if self.prompt_tasks and self.token_tasks:
            return MIXED
        return "prompt_only" if self.prompt_tasks else "token_only"

    @property
    def tasks(self):
        return self.prompt_tasks + self.token_tasks


class Machine:
    """A simulated server owned by the engine's single logical timeline."""

    def __init__(self, machine_id: int, spec: MachineSpec, perf: PerfModel,
                 home_role: str, sched: SchedulerConfig, always_mixed: bool = False):
        self.id = machine_id
        self.spec = spec
        self.perf = perf
        self.home_role = home_role
        self.always_mixed = always_mixed
        self.current_pool = MIXED if always_mixed else home_role
        self.sched = sched
        self.pending_prompts: list[Task] = []
        self.pending_tokens_q: list[Task] = []
        self.resident: list[Task] = []      # token tasks holding KV memory
        self.running: Batch | None = None
        self.busy_until = 0.0
        self.busy_time = 0.0
        self.pending_token_count = 0        # JSQ queue length
        self._resident_context = 0          # sum of resident token contexts
        # admission reserves each task's full final context so that KV
        # growth during generation can never blow past capacity
        self._resident_projected = 0
        self._queued_ids: set[tuple[int, str]] = set()
        # residency bookkeeping for re-purposing
        self.mixed_since: float | None = None
        self.mixed_accum = 0.0

    # -- memory ------------------------------------------------------------

    def memory_used(self) -> float:
        running_prompt = 0
        if self.running is not None:
            running_prompt = sum(t.tokens for t in self.running.prompt_tasks)
        return self.perf.weight_memory + \
            self.perf.kv_cache_bytes(self._resident_context + running_prompt)

    def _memory_fits(self, extra_tokens: int) -> bool:
        projected = self.perf.weight_memory + \
            self.perf.kv_cache_bytes(self._resident_projected + extra_tokens)
        return projected <= self.perf.memory_capacity + 1e-6

    # -- queueing ----------------------------------------------------------

    def enqueue(self, task: Task, now: float) -> None:
        key = (task.request_id, task.kind)
        if key in self._queued_ids:
            raise SplitsimError(f"duplicate task {key} on machine {self.id}")
        self._queued_ids.add(key)
        if task.kind == PROMPT:
            self.pending_prompts.append(task)
            self.pending_token_count += task.tokens
        else:
            self.pending_tokens_q.append(task)
            self.pending_token_count += 1

    def has_opposite_work(self) -> bool:
        """True while tasks of the non-home kind are pending or running."""
        if self.home_role == PROMPT:
            if self.pending_tokens_q or self.resident:
                return True
            return self.running is not None and bool(self.running.token_tasks)
        if self.pending_prompts:
            return True
        return self.running is not None and bool(self.running.prompt_tasks)

    def is_idle(self) -> bool:
        return self.running is None

    def has_work(self) -> bool:
        return bool(self.pending_prompts or self.pending_tokens_q
                    or any(not t.parked for t in self.resident))

    # -- batch formation ---------------------------------------------------

    def _allows(self, kind: str) -> bool:
        if self.current_pool == MIXED:
            return True
        return self.current_pool == kind

    def form_batch(self, now: float) -> Batch | None:
        """Decide the batch for the next iteration, or None if idle.

        Called only at iteration boundaries.  Side effects: admitted queue
        tasks become resident (token) or leave the queue (prompt); token
        tasks bumped out of the previous batch are parked with their
        preempt count incremented.
        """
        if self.running is not None:
            raise SplitsimError("form_batch called mid-iteration")
        sched = self.sched
        mixed = self.current_pool == MIXED

        # Non-preemptable resident tokens keep their slots ahead of prompts.
        reserved = sum(1 for t in self.resident
                       if not t.parked and t.preempt_count >= sched.max_preemptions)

        prompt_batch: list[Task] = []
        if self._allows(PROMPT) and self.pending_prompts:
            prompt_slots = (self.perf.max_token_batch - reserved) if mixed else None
            total = 0
            for task in list(self.pending_prompts):
                if prompt_slots is not None and len(prompt_batch) >= prompt_slots:
                    break
                # always admit the head prompt, even above the cap
                if prompt_batch and total + task.tokens > sched.prompt_token_cap:
                    break
                if not self._memory_fits(total + task.tokens):
                    break
                prompt_batch.append(task)
                total += task.tokens
            # note: pending_token_count keeps counting admitted prompts until
            # they finish, so JSQ sees in-flight prompt work
            for task in prompt_batch:
                self.pending_prompts.remove(task)
                self._queued_ids.discard((task.request_id, PROMPT))

        token_batch: list[Task] = []
        if self._allows(TOKEN):
            slots = self.perf.max_token_batch - len(prompt_batch)
            queued = set(id(t) for t in self.pending_tokens_q)
            candidates = sorted(
                self.resident + self.pending_tokens_q,
                key=lambda t: (-aging_priority(t, now, sched), t.seq))
            prompt_kv = sum(t.tokens for t in prompt_batch)
            for task in candidates:
                if len(token_batch) >= slots:
                    break
                if id(task) in queued:
                    if not self._memory_fits(prompt_kv + task.tokens + task.remaining_output):
                        break  # FCFS: do not skip ahead of a blocked task
                    self.pending_tokens_q.remove(task)
                    self._queued_ids.discard((task.request_id, TOKEN))
                    self.resident.append(task)
                    self._resident_context += task.tokens
                    self._resident_projected += task.tokens + task.remaining_output
                task.parked = False
                token_batch.append(task)
            # resident tokens that lost their slot to a prompt get parked
            batched = set(id(t) for t in token_batch)
            for task in self.resident:
                if id(task) not in batched and not task.parked:
                    task.parked = True
                    task.preempt_count += 1

        if not prompt_batch and not token_batch:
            return None
        return Batch(prompt_batch, token_batch,
                     self._iteration_time(prompt_batch, token_batch))

    def _iteration_time(self, prompt_tasks, token_tasks) -> float:
        p = self.perf.prompt_time(sum(t.tokens for t in prompt_tasks)) if prompt_tasks else 0.0
        t = self.perf.token_iter_time(len(token_tasks)) if token_tasks else 0.0
        if prompt_tasks and token_tasks and self.sched.mixing_rule == "max":
            return max(p, t)
        return p + t

    # -- iteration completion ---------------------------------------------

    def complete_iteration(self, batch: Batch, now: float) -> list[tuple[str, Task]]:
        """Apply one finished iteration; returns lifecycle events.

        Event kinds: ``token_emitted`` (one per token task),
        ``prompt_finished`` (first token emitted), ``request_finished``.
        """
        if batch is not self.running:
            raise SplitsimError("completing a batch that is not running")
        events: list[tuple[str, Task]] = []
        for task in batch.prompt_tasks:
            self.pending_token_count -= task.tokens
            events.append(("prompt_finished", task))
            if task.output_tokens == 1:
                events.append(("request_finished", task))
            # prompt KV leaves this machine (transferred or handed to the
            # local token task, which is charged separately on admission)
        for task in batch.token_tasks:
            task.tokens += 1
            task.remaining_output -= 1
            self._resident_context += 1
            events.append(("token_emitted", task))
            if task.remaining_output == 0:
                self.resident.remove(task)
                self._resident_context -= task.tokens
                self._resident_projected -= task.tokens
                self.pending_token_count -= 1
                events.append(("request_finished", task))
        self.running = None
        return events

    # -- pool residency tracking ------------------------------------------

    def note_pool_change(self, new_pool: str, now: float) -> None:
        if self.current_pool == MIXED and new_pool != MIXED and self.mixed_since is not None:
            self.mixed_accum += now - self.mixed_since
            self.mixed_since = None
        if new_pool == MIXED and self.current_pool != MIXED:
            self.mixed_since = now
        self.current_pool = new_pool

    def mixed_residency(self, now: float) -> float:
        """Mixed-pool time accumulated since the last window reset."""
        extra = (now - self.mixed_since) if self.mixed_since is not None else 0.0
        return self.mixed_accum + extra

    def reset_mixed_residency(self, now: float) -> None:
        self.mixed_accum = 0.0
        if self.mixed_since is not None:
            self.mixed_since = now
