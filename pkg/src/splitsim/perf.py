"""Piece-wise linear performance models for prompt time, token-iteration
time, and memory footprint.

Models are fitted from profile samples (or shipped as calibration presets)
per machine type and model.  Between knots the predictor is linear, at
knots it interpolates exactly, and beyond the last knot it extrapolates
with the final segment's slope.  Noisy fits are repaired to be monotone
with pool-adjacent-violators before knot construction, since the
schedulers assume non-decreasing costs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, FitError, ParseError, ValidationError

MACHINE_TYPES = ("A100", "H100", "H100cap")


@dataclass(frozen=True)
class MachineSpec:
    """Per-machine hardware rates, normalized to a DGX-A100 = 1.0."""

    machine_type: str
    power_rating: float
    cost_rate: float
    interconnect_bandwidth: float  # bits/second
    memory_capacity: float         # bytes

    def __post_init__(self):
        if min(self.power_rating, self.cost_rate,
               self.interconnect_bandwidth, self.memory_capacity) <= 0:
            raise ValidationError("MachineSpec fields must be positive")


# DGX-class machines: 8 GPUs x 80 GB HBM; Infiniband per the vendor data-sheet
# ratios (A100 200 Gb/s, H100 400 Gb/s).  Power/cost normalized to A100.
MACHINE_SPECS: dict[str, MachineSpec] = {
    "A100": MachineSpec("A100", 1.0, 1.0, 200e9, 640e9),
    "H100": MachineSpec("H100", 1.75, 2.35, 400e9, 640e9),
    "H100cap": MachineSpec("H100cap", 1.23, 2.5, 400e9, 640e9),
}


@dataclass(frozen=True)
class ProfileSample:
    """One measured point from profiling a model on target hardware."""

    machine_type: str
    llm: str
    batch_prompt_tokens: int
    batch_token_count: int
    measured_time: float     # milliseconds
    measured_memory: float   # bytes

    def __post_init__(self):
        if (self.batch_prompt_tokens > 0) == (self.batch_token_count > 0):
            raise ValidationError(
                "exactly one of batch_prompt_tokens/batch_token_count must be positive")
        if self.measured_time <= 0:
            raise ValidationError("measured_time must be positive")

    @property
    def phase(self):
        return "prompt" if self.batch_prompt_tokens > 0 else "token"

    @property
    def abscissa(self):
        return self.batch_prompt_tokens if self.batch_prompt_tokens > 0 else self.batch_token_count


def _piecewise_eval(x, xs, ys):
    """Evaluate a piecewise-linear curve, extrapolating edge slopes."""
    x = float(x)
    if len(xs) == 1:
        return float(ys[0])
    if x >= xs[-1]:
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return float(ys[-1] + slope * (x - xs[-1]))
    if x <= xs[0]:
        slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        return float(ys[0] + slope * (x - xs[0]))
    return float(np.interp(x, xs, ys))


@dataclass
class PerfModel:
    """Fitted (or preset) predictor for one (machine_type, llm) pair."""

    machine_type: str
    llm: str
    prompt_knots: tuple[np.ndarray, np.ndarray]  # tokens -> ms
    token_knots: tuple[np.ndarray, np.ndarray]   # batch size -> ms/iteration
    kv_bytes_per_token: float
    weight_memory: float
    memory_capacity: float
    max_token_batch: int

    def __post_init__(self):
        for xs, ys in (self.prompt_knots, self.token_knots):
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            if np.any(np.diff(xs) <= 0):
                raise ValidationError("knot abscissas must be strictly increasing")
            if np.any(ys <= 0):
                raise ValidationError("predicted times must be strictly positive")
        self.prompt_knots = (np.asarray(self.prompt_knots[0], dtype=float),
                             np.asarray(self.prompt_knots[1], dtype=float))
        self.token_knots = (np.asarray(self.token_knots[0], dtype=float),
                            np.asarray(self.token_knots[1], dtype=float))
        if self.kv_bytes_per_token <= 0:
            raise ValidationError("kv_bytes_per_token must be positive")

    def prompt_time(self, total_prompt_tokens: int) -> float:
        """Prompt-phase time in ms for a batch totalling this many tokens."""
        if total_prompt_tokens < 1:
            raise ValidationError("prompt tokens must be >= 1")
        return _piecewise_eval(total_prompt_tokens, *self.prompt_knots)

    def token_iter_time(self, batch_size: int) -> float:
        """One token-generation iteration in ms at the given batch size."""
        if batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if batch_size > self.max_token_batch:
            raise CapacityError(
                f"batch {batch_size} exceeds max_token_batch {self.max_token_batch}")
        return _piecewise_eval(batch_size, *self.token_knots)

    def kv_cache_bytes(self, context_tokens: int) -> float:
        if context_tokens < 0:
            raise ValidationError("context tokens must be >= 0")
        return context_tokens * self.kv_bytes_per_token

    def memory_in_use(self, active_contexts) -> float:
        """Weights plus the KV cache of every active context."""
        return self.weight_memory + sum(self.kv_cache_bytes(c) for c in active_contexts)


@dataclass
class FitReport:
    """Error metrics from a fit (percentages)."""

    train_mape_prompt: float
    train_mape_token: float
    holdout_mape: float | None = None


def _pav_nondecreasing(ys, weights):
    """Pool-adjacent-violators for a non-decreasing sequence."""
    blocks = []  # [value, weight, count]
    for y, w in zip(ys, weights):
        blocks.append([float(y), float(w), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2, c2 = blocks.pop()
            v1, w1, c1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2])
    out = []
    for v, _, c in blocks:
        out.extend([v] * c)
    return np.asarray(out)


def _dedupe(xs, ys):
    """Average duplicate abscissas; returns sorted unique (x, y)."""
    order = np.argsort(xs, kind="stable")
    xs = np.asarray(xs, dtype=float)[order]
    ys = np.asarray(ys, dtype=float)[order]
    ux, inverse, counts = np.unique(xs, return_inverse=True, return_counts=True)
    sums = np.zeros(len(ux))
    np.add.at(sums, inverse, ys)
    return ux, sums / counts


def _merge_knots(xs, ys, budget):
    """Greedily drop interior knots, each time removing the one whose
    linear bridge adds the least absolute error."""
    xs = list(xs)
    ys = list(ys)
    while len(xs) > budget:
        best_i, best_err = None, None
        for i in range(1, len(xs) - 1):
            t = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1])
            bridged = ys[i - 1] + t * (ys[i + 1] - ys[i - 1])
            err = abs(bridged - ys[i])
            if best_err is None or err < best_err:
                best_i, best_err = i, err
        del xs[best_i], ys[best_i]
    return np.asarray(xs), np.asarray(ys)


def _fit_curve(samples, knot_budget):
    xs = [s.abscissa for s in samples]
    ys = [s.measured_time for s in samples]
    ux, uy = _dedupe(xs, ys)
    if len(ux) < 2:
        raise FitError("need at least 2 distinct abscissas per phase")
    uy = _pav_nondecreasing(uy, np.ones(len(uy)))
    uy = np.maximum(uy, 1e-9)
    if len(ux) > knot_budget:
        ux, uy = _merge_knots(ux, uy, knot_budget)
    return ux, uy


def _mape(model_fn, samples):
    if not samples:
        return 0.0
    errs = [abs(model_fn(s.abscissa) - s.measured_time) / s.measured_time for s in samples]
    return 100.0 * float(np.mean(errs))


def fit_piecewise_linear(samples, knot_budget=32, holdout_fraction=0.0,
                         seed=0, memory_capacity=None, max_token_batch=None):
    """Fit a PerfModel from profile samples of a single (machine_type, llm).

    With ``holdout_fraction`` > 0, that fraction of samples (seeded split)
    is withheld and the returned report carries the holdout MAPE.
    Memory parameters come from a least-squares line over the samples'
    measured memory (intercept = weights, slope = KV bytes/token).
    """
    samples = list(samples)
    if not samples:
        raise FitError("no samples")
    keys = {(s.machine_type, s.llm) for s in samples}
    if len(keys) != 1:
        raise FitError(f"samples span multiple (machine_type, llm) groups: {keys}")
    machine_type, llm = keys.pop()

    if holdout_fraction > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        idx = rng.permutation(len(samples))
        n_hold = int(round(holdout_fraction * len(samples)))
        hold = [samples[i] for i in idx[:n_hold]]
        train = [samples[i] for i in idx[n_hold:]]
    else:
        hold, train = [], samples

    prompt_train = [s for s in train if s.phase == "prompt"]
    token_train = [s for s in train if s.phase == "token"]
    if len(prompt_train) < 2 or len(token_train) < 2:
        raise FitError("need >= 2 prompt and >= 2 token samples")
    prompt_knots = _fit_curve(prompt_train, knot_budget)
    token_knots = _fit_curve(token_train, knot_budget)

    # memory line from prompt-phase samples: mem = weights + tokens * kv
    mem_x = np.asarray([s.abscissa for s in prompt_train], dtype=float)
    mem_y = np.asarray([s.measured_memory for s in prompt_train], dtype=float)
    if np.any(mem_y > 0):
        A = np.vstack([np.ones_like(mem_x), mem_x]).T
        coef, *_ = np.linalg.lstsq(A, mem_y, rcond=None)
        weight_memory = max(float(coef[0]), 0.0)
        kv_bytes = max(float(coef[1]), 1.0)
    else:
        weight_memory, kv_bytes = 0.0, 1.0

    if memory_capacity is None:
        memory_capacity = MACHINE_SPECS.get(machine_type, MACHINE_SPECS["A100"]).memory_capacity
    if max_token_batch is None:
        max_token_batch = int(max(s.abscissa for s in token_train))

    model = PerfModel(machine_type, llm, prompt_knots, token_knots,
                      kv_bytes, weight_memory, memory_capacity, max_token_batch)
    report = FitReport(
        train_mape_prompt=_mape(model.prompt_time, prompt_train),
        train_mape_token=_mape(lambda b: _piecewise_eval(b, *model.token_knots), token_train),
    )
    if hold:
        def predict(s):
            if s.phase == "prompt":
                return model.prompt_time(s.abscissa)
            return _piecewise_eval(s.abscissa, *model.token_knots)
        errs = [abs(predict(s) - s.measured_time) / s.measured_time for s in hold]
        report.holdout_mape = 100.0 * float(np.mean(errs))
    return model, report


# ---------------------------------------------------------------------------
# Calibration presets
#
# Anchored to measured medians on DGX machines without batching:
# Llama2-70B prompt of 1500 tokens takes 185 ms (A100) / 95 ms (H100);
# single-token iteration 52 ms (A100) / 31 ms (H100).  Beyond 2048 tokens
# the prompt curve turns superlinear (attention cost grows quadratically
# once the per-token linear terms stop dominating).  KV bytes per token
# from the architecture (2 * layers * hidden * 2 bytes): Llama2-70B
# 2*80*8192*2 = 2,621,440; BLOOM-176B 2*70*14336*2 = 4,014,080.
# Token batches scale up to 64 before memory runs out (Llama2-70B); the
# weight figure includes framework/activation overhead beyond raw fp16
# weights so that 64 contexts of the 2048-token calibration length fill
# the 640 GB machine.
# ---------------------------------------------------------------------------

_CALIBRATION = {
    ("llama2-70b", "A100"): dict(
        prompt=([1, 128, 256, 512, 1020, 1500, 2048, 4096, 8192],
                [16, 49, 78, 142, 155, 185, 253, 700, 2400]),
        token=([1, 2, 4, 8, 16, 32, 64],
               [52, 52.5, 54, 55, 60, 72, 104]),
        kv=2_621_440.0, weights=295e9, capacity=640e9, max_batch=64,
    ),
    ("llama2-70b", "H100"): dict(
        prompt=([1, 128, 256, 512, 1020, 1500, 2048, 4096, 8192],
                [8, 25, 40, 73, 84, 95, 130, 360, 1250]),
        token=([1, 2, 4, 8, 16, 32, 64],
               [31, 31.5, 32, 33, 36, 43, 62]),
        kv=2_621_440.0, weights=295e9, capacity=640e9, max_batch=64,
    ),
    ("bloom-176b", "A100"): dict(
        prompt=([1, 256, 512, 1020, 1500, 2048, 4096],
                [23, 114, 209, 323, 456, 627, 1102]),
        token=([1, 8, 16, 32, 64],
               [58, 62, 68, 81, 116]),
        kv=4_014_080.0, weights=420e9, capacity=640e9, max_batch=26,
    ),
    ("bloom-176b", "H100"): dict(
        prompt=([1, 256, 512, 1020, 1500, 2048, 4096],
                [12, 60, 110, 170, 240, 330, 580]),
        token=([1, 8, 16, 32, 64],
               [40, 43, 47, 56, 80]),
        kv=4_014_080.0, weights=420e9, capacity=640e9, max_batch=26,
    ),
}

# Under a 50% per-GPU power cap the token phase is unaffected while prompt
# computation slows; the default inflation factor is 1.5x.
H100CAP_PROMPT_FACTOR = 1.5

LLMS = ("llama2-70b", "bloom-176b")


def get_calibration(llm: str, machine_type: str,
                    h100cap_prompt_factor: float = H100CAP_PROMPT_FACTOR) -> PerfModel:
    """Return the built-in calibrated preset for (llm, machine_type)."""
    base_type = "H100" if machine_type == "H100cap" else machine_type
    key = (llm, base_type)
    if key not in _CALIBRATION:
        raise ValidationError(f"no calibration preset for llm={llm!r} machine={machine_type!r}")
    c = _CALIBRATION[key]
    px, py = c["prompt"]
    py = list(py)
    if machine_type == "H100cap":
        py = [v * h100cap_prompt_factor for v in py]
    return PerfModel(machine_type, llm,
                     (np.asarray(px, float), np.asarray(py, float)),
                     (np.asarray(c["token"][0], float), np.asarray(c["token"][1], float)),
                     c["kv"], c["weights"], c["capacity"], c["max_batch"])


PROFILE_HEADER = "machine_type,llm,phase,prompt_tokens,batch_size,time_ms,memory_bytes"


def export_profile_csv(model: PerfModel) -> str:
    """Dump a model's knots in the profile CSV format (round-trips via fit)."""
    buf = io.StringIO()
    buf.write(PROFILE_HEADER + "\n")
    for x, y in zip(*model.prompt_knots):
        mem = model.weight_memory + x * model.kv_bytes_per_token
        buf.write(f"{model.machine_type},{model.llm},prompt,{int(x)},0,{y:.6f},{mem:.0f}\n")
    for x, y in zip(*model.token_knots):
        buf.write(f"{model.machine_type},{model.llm},token,0,{int(x)},{y:.6f},0\n")
    return buf.getvalue()


def parse_profile_csv(source) -> list[ProfileSample]:
    """Read profile samples from the CSV format above."""
    if hasattr(source, "read"):
        text = source.read()
    elif "\n" in str(source):
        text = str(source)
    else:
        with open(source) as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text.strip()))
    rows = list(reader)
    if not rows or ",".join(rows[0]) != PROFILE_HEADER:
        raise ParseError(f"expected header {PROFILE_HEADER!r}", line=1)
    samples = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 7:
            raise ValidationError(f"profile line {i}: expected 7 fields")
        mt, llm, phase, ptok, bsz, tms, mem = row
        ptok, bsz = int(ptok), int(bsz)
        if phase not in ("prompt", "token"):
            raise ValidationError(f"profile line {i}: bad phase {phase!r}")
        samples.append(ProfileSample(mt, llm, ptok if phase == "prompt" else 0,
                                     bsz if phase == "token" else 0,
                                     float(tms), float(mem)))
    return samples
