import pytest

from splitsim import (
    MACHINE_SPECS,
    Machine,
    SchedulerConfig,
    SplitsimError,
    Task,
    ValidationError,
    get_calibration,
)
from splitsim.machine import MIXED, PROMPT, TOKEN, aging_priority


def make_machine(home=PROMPT, always_mixed=False, sched=None, machine_type="H100"):
    return Machine(0, MACHINE_SPECS[machine_type],
                   get_calibration("llama2-70b", machine_type),
                   home_role=home, sched=sched or SchedulerConfig(),
                   always_mixed=always_mixed)


def prompt_task(rid, tokens, out=4, t=0.0):
    return Task(rid, PROMPT, tokens, t, out, out)


def token_task(rid, tokens, out=4, t=0.0):
    return Task(rid, TOKEN, tokens, t, out, out - 1)


class TestQueueing:
    def test_pending_tokens_counting(self):
        # one queued 1500-token prompt plus three token tasks -> 1503
        m = make_machine(home=MIXED, always_mixed=True)
        m.enqueue(prompt_task(0, 1500), 0.0)
        for rid in (1, 2, 3):
            m.enqueue(token_task(rid, 100), 0.0)
        assert m.pending_token_count == 1503

    def test_empty_machine(self):
        assert make_machine().pending_token_count == 0

    def test_duplicate_task_rejected(self):
        m = make_machine()
        m.enqueue(prompt_task(7, 10), 0.0)
        with pytest.raises(SplitsimError):
            m.enqueue(prompt_task(7, 10), 0.0)

    def test_running_prompt_still_counts(self):
        # in-flight prompt work stays visible to the cluster router until
        # the prompt finishes
        m = make_machine()
        m.enqueue(prompt_task(0, 1500), 0.0)
        batch = m.form_batch(0.0)
        m.running = batch
        assert m.pending_token_count == 1500
        m.complete_iteration(batch, 95.0)
        assert m.pending_token_count == 0


class TestPromptBatching:
    def test_cap_excludes_second_prompt(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 1500), 0.0)
        m.enqueue(prompt_task(1, 1000), 0.0)
        batch = m.form_batch(0.0)
        assert [t.request_id for t in batch.prompt_tasks] == [0]

    def test_fills_up_to_cap(self):
        m = make_machine()
        for rid in range(4):
            m.enqueue(prompt_task(rid, 512), 0.0)
        batch = m.form_batch(0.0)
        assert [t.request_id for t in batch.prompt_tasks] == [0, 1, 2, 3]

    def test_oversized_head_admitted_alone(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 5000), 0.0)
        m.enqueue(prompt_task(1, 10), 0.0)
        batch = m.form_batch(0.0)
        assert [t.request_id for t in batch.prompt_tasks] == [0]

    def test_fcfs_order(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 1000), 0.0)
        m.enqueue(prompt_task(1, 900), 1.0)
        m.enqueue(prompt_task(2, 500), 2.0)  # would overflow the cap
        batch = m.form_batch(2.0)
        assert [t.request_id for t in batch.prompt_tasks] == [0, 1]

    def test_iteration_time_is_prompt_time(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 1000), 0.0)
        m.enqueue(prompt_task(1, 500), 0.0)
        batch = m.form_batch(0.0)
        assert batch.iteration_time == m.perf.prompt_time(1500)

    def test_token_home_machine_rejects_prompts(self):
        m = make_machine(home=TOKEN)
        m.enqueue(prompt_task(0, 100), 0.0)
        # machine still in token pool: no prompt may run until the pool
        # transition (handled by the cluster layer) marks it mixed
        assert m.form_batch(0.0) is None
        m.note_pool_change(MIXED, 0.0)
        assert m.form_batch(0.0) is not None


class TestTokenBatching:
    def test_batch_size_limit(self):
        m = make_machine(home=TOKEN)
        for rid in range(70):
            m.enqueue(token_task(rid, 100), float(rid))
        batch = m.form_batch(70.0)
        assert len(batch.token_tasks) == 64
        assert len(m.pending_tokens_q) == 6

    def test_iteration_grows_context(self):
        m = make_machine(home=TOKEN)
        m.enqueue(token_task(0, 100, out=3), 0.0)
        batch = m.form_batch(0.0)
        m.running = batch
        events = m.complete_iteration(batch, 31.0)
        assert ("token_emitted", batch.token_tasks[0]) in events
        assert batch.token_tasks[0].tokens == 101

    def test_finish_releases_memory(self):
        m = make_machine(home=TOKEN)
        m.enqueue(token_task(0, 100, out=2), 0.0)
        before = m.memory_used()
        batch = m.form_batch(0.0)
        m.running = batch
        events = m.complete_iteration(batch, 31.0)
        assert ("request_finished", batch.token_tasks[0]) in events
        assert m.memory_used() == pytest.approx(m.perf.weight_memory)
        assert before == pytest.approx(m.perf.weight_memory)

    def test_memory_admission_blocks(self):
        m = make_machine(home=TOKEN)
        # each task reserves its final context; capacity fits 64 tasks of
        # 2048 + overhead, so giant contexts must be throttled
        for rid in range(40):
            m.enqueue(token_task(rid, 8000, out=100), float(rid))
        batch = m.form_batch(40.0)
        kv = m.perf.kv_bytes_per_token
        reserved = sum(t.tokens + t.remaining_output for t in batch.token_tasks)
        assert m.perf.weight_memory + reserved * kv <= m.perf.memory_capacity
        assert len(batch.token_tasks) < 40

    def test_memory_blocked_head_blocks_tail(self):
        # FCFS: a memory-blocked token task must not be skipped
        m = make_machine(home=TOKEN)
        cap = m.perf.memory_capacity
        weights = m.perf.weight_memory
        kv = m.perf.kv_bytes_per_token
        big = int((cap - weights) / kv * 0.9)
        m.enqueue(token_task(0, big, out=10), 0.0)
        m.enqueue(token_task(1, big, out=10), 1.0)   # does not fit
        m.enqueue(token_task(2, 10, out=10), 2.0)    # would fit, must wait
        batch = m.form_batch(3.0)
        assert [t.request_id for t in batch.token_tasks] == [0]


class TestMixedBatching:
    def test_prompts_preempt_tokens_for_slots(self):
        sched = SchedulerConfig()
        m = make_machine(home=TOKEN, always_mixed=True, sched=sched)
        for rid in range(m.perf.max_token_batch):
            m.enqueue(token_task(rid, 100, out=50), float(rid))
        b1 = m.form_batch(100.0)
        m.running = b1
        m.complete_iteration(b1, 131.0)
        m.enqueue(prompt_task(999, 500), 131.0)
        b2 = m.form_batch(131.0)
        assert any(t.request_id == 999 for t in b2.prompt_tasks)
        assert len(b2.prompt_tasks) + len(b2.token_tasks) <= m.perf.max_token_batch
        parked = [t for t in m.resident if t.parked]
        assert len(parked) == 1
        assert parked[0].preempt_count == 1

    def test_preempted_task_keeps_memory(self):
        m = make_machine(home=TOKEN, always_mixed=True)
        for rid in range(m.perf.max_token_batch):
            m.enqueue(token_task(rid, 100, out=50), float(rid))
        b1 = m.form_batch(100.0)
        m.running = b1
        used_before = m.memory_used()
        m.complete_iteration(b1, 131.0)
        m.enqueue(prompt_task(999, 500), 131.0)
        m.form_batch(131.0)
        # +64 generated tokens, parked task still resident
        assert m.memory_used() >= used_before

    def test_max_preemptions_makes_nonpreemptable(self):
        sched = SchedulerConfig(max_preemptions=1)
        m = make_machine(home=TOKEN, always_mixed=True, sched=sched)
        t = token_task(0, 100, out=1000)
        m.enqueue(t, 0.0)
        t.preempt_count = sched.max_preemptions
        assert aging_priority(t, 1.0, sched) > 1e17
        b = m.form_batch(0.0)
        m.running = b
        m.complete_iteration(b, 31.0)
        # a flood of prompts cannot take the reserved slot
        for rid in range(1, 70):
            m.enqueue(prompt_task(rid, 30), 31.0)
        b2 = m.form_batch(31.0)
        assert any(tt.request_id == 0 for tt in b2.token_tasks)

    def test_mixing_rule_sum_vs_max(self):
        for rule, combine in (("sum", lambda p, t: p + t), ("max", max)):
            m = make_machine(home=TOKEN, always_mixed=True,
                             sched=SchedulerConfig(mixing_rule=rule))
            m.enqueue(token_task(0, 100), 0.0)
            b1 = m.form_batch(0.0)
            m.running = b1
            m.complete_iteration(b1, 31.0)
            m.enqueue(prompt_task(1, 500), 31.0)
            b2 = m.form_batch(31.0)
            assert b2.kind == "mixed"
            expected = combine(m.perf.prompt_time(500), m.perf.token_iter_time(1))
            assert b2.iteration_time == pytest.approx(expected)

    def test_aging_orders_token_candidates(self):
        m = make_machine(home=TOKEN)
        m.enqueue(token_task(0, 100, t=5.0), 5.0)
        m.enqueue(token_task(1, 100, t=0.0), 0.0)  # older, higher aged priority
        batch = m.form_batch(10.0)
        assert [t.request_id for t in batch.token_tasks][:1] == [1]


class TestInvariants:
    def test_form_batch_mid_iteration_rejected(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 10), 0.0)
        m.running = m.form_batch(0.0)
        m.enqueue(prompt_task(1, 10), 0.0)
        with pytest.raises(SplitsimError):
            m.form_batch(1.0)

    def test_complete_foreign_batch_rejected(self):
        m = make_machine()
        m.enqueue(prompt_task(0, 10), 0.0)
        batch = m.form_batch(0.0)
        with pytest.raises(SplitsimError):
            m.complete_iteration(batch, 1.0)

    def test_scheduler_config_validation(self):
        with pytest.raises(ValidationError):
            SchedulerConfig(prompt_token_cap=0)
        with pytest.raises(ValidationError):
            SchedulerConfig(mixing_rule="average")

    def test_mixed_residency_accounting(self):
        m = make_machine(home=PROMPT)
        m.note_pool_change(MIXED, 10.0)
        m.note_pool_change(PROMPT, 25.0)
        assert m.mixed_residency(30.0) == pytest.approx(15.0)
        m.reset_mixed_residency(30.0)
        assert m.mixed_residency(40.0) == 0.0
