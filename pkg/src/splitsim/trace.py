"""Request traces: CSV replay, synthetic generation, and summary statistics.

A trace is a time-ordered list of requests, each carrying only an arrival
time and the prompt/output token counts.  Synthetic traces use Poisson
arrivals with per-request sizes drawn from configurable token-count
distributions; the ``coding`` and ``conversation`` presets are calibrated
so their medians match the production workloads they imitate
(median prompt 1500 / median output 13 for coding, 1020 / 129 for
conversation).

All randomness goes through numpy's Philox generator (counter-based,
documented, portable), so a fixed seed reproduces the same trace on any
platform.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

TRACE_HEADER = "arrival_s,prompt_tokens,output_tokens"


@dataclass(frozen=True)
class Request:
    """A single inference request."""

    id: int
    arrival: float
    prompt_tokens: int
    output_tokens: int

    def __post_init__(self):
        if self.arrival < 0:
            raise ValidationError(f"request {self.id}: negative arrival {self.arrival}")
        if self.prompt_tokens < 1:
            raise ValidationError(f"request {self.id}: prompt_tokens must be >= 1")
        if self.output_tokens < 1:
            raise ValidationError(f"request {self.id}: output_tokens must be >= 1")


@dataclass
class Trace:
    """Requests sorted by arrival, plus the covered duration in seconds."""

    requests: list[Request]
    duration: float
    clamped_samples: int = 0  # size draws that hit a distribution clamp

    def __post_init__(self):
        arrivals = [r.arrival for r in self.requests]
        if any(b < a for a, b in zip(arrivals, arrivals[1:])):
            raise ValidationError("trace arrivals are not sorted")
        if arrivals and arrivals[-1] > self.duration:
            raise ValidationError("arrival beyond trace duration")
        ids = [r.id for r in self.requests]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate request ids in trace")

    def __len__(self):
        return len(self.requests)


class SizeDistribution:
    """Token-count distribution with a hard support clamp.

    Kinds:
      * ``lognormal``       -- params (mu, sigma) of the underlying normal
      * ``bimodal-lognormal`` -- params (w2, mu1, sigma1, mu2, sigma2);
                               component 2 is drawn with probability w2
      * ``empirical``       -- explicit CDF table (quantiles, values)

    Sampled values are rounded to integers and clamped into
    ``[min_tokens, max_tokens]``; the number of clamped draws is counted
    rather than resampled, so the clamp introduces no hidden bias.
    """

    KINDS = ("lognormal", "bimodal-lognormal", "empirical")

    def __init__(self, kind, params, min_tokens=1, max_tokens=1 << 20):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown distribution kind {kind!r}")
        if min_tokens < 1 or max_tokens < min_tokens:
            raise ValidationError("invalid clamp range")
        if kind == "empirical":
            q, v = params
            q = np.asarray(q, dtype=float)
            v = np.asarray(v, dtype=float)
            if q.ndim != 1 or q.shape != v.shape or len(q) == 0:
                raise ValidationError("empirical CDF table malformed")
            if np.any(np.diff(q) <= 0) or q[-1] > 1.0 or q[0] <= 0.0:
                raise ValidationError("empirical quantiles must be strictly increasing in (0, 1]")
            params = (q, v)
        self.kind = kind
        self.params = params
        self.min_tokens = int(min_tokens)
        self.max_tokens = int(max_tokens)

    @classmethod
    def lognormal(cls, mu, sigma, min_tokens=1, max_tokens=1 << 20):
        return cls("lognormal", (float(mu), float(sigma)), min_tokens, max_tokens)

    @classmethod
    def bimodal_lognormal(cls, w2, mu1, sigma1, mu2, sigma2, min_tokens=1, max_tokens=1 << 20):
        if not 0.0 <= w2 <= 1.0:
            raise ValidationError("mixture weight must be in [0, 1]")
        return cls("bimodal-lognormal", (float(w2), float(mu1), float(sigma1), float(mu2), float(sigma2)),
                   min_tokens, max_tokens)

    @classmethod
    def empirical(cls, quantiles, values, min_tokens=1, max_tokens=1 << 20):
        return cls("empirical", (quantiles, values), min_tokens, max_tokens)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, int]:
        """Draw ``n`` token counts; returns (values, clamped_count)."""
        if n == 0:
            return np.zeros(0, dtype=np.int64), 0
        if self.kind == "lognormal":
            mu, sigma = self.params
            raw = rng.lognormal(mu, sigma, n)
        elif self.kind == "bimodal-lognormal":
            w2, mu1, s1, mu2, s2 = self.params
            pick2 = rng.random(n) < w2
            raw = np.where(pick2, rng.lognormal(mu2, s2, n), rng.lognormal(mu1, s1, n))
        else:
            q, v = self.params
            u = rng.random(n)
            raw = v[np.minimum(np.searchsorted(q, u, side="left"), len(v) - 1)]
        vals = np.rint(raw).astype(np.int64)
        clamped = int(np.count_nonzero((vals < self.min_tokens) | (vals > self.max_tokens)))
        return np.clip(vals, self.min_tokens, self.max_tokens), clamped


# Workload presets calibrated so medians land on the production values
# (coding: prompt 1500 / output 13; conversation: prompt 1020 / output 129,
# with an almost-bimodal output shape).  The coding prompt tail is heavy:
# completion contexts include large chunks of already-written code.
PRESETS: dict[str, dict[str, SizeDistribution]] = {
    "coding": {
        "prompt": SizeDistribution.lognormal(math.log(1500), 1.1, 512, 8192),
        "output": SizeDistribution.lognormal(math.log(13), 0.8, 1, 1000),
    },
    "conversation": {
        "prompt": SizeDistribution.lognormal(math.log(1020), 1.1, 256, 8192),
        "output": SizeDistribution.bimodal_lognormal(
            0.55, math.log(20), 0.8, math.log(320), 0.7, 1, 4096),
    },
}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def parse_trace(source) -> Trace:
    """Parse the three-column trace CSV; stable-sorts by arrival.

    ``source`` may be a path, a text string, or a readable file object.
    """
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode()
    elif isinstance(source, bytes):
        text = source.decode()
    elif "\n" in str(source) or str(source).startswith(TRACE_HEADER.split(",")[0]):
        text = str(source)
    else:
        with open(source, "r") as fh:
            text = fh.read()
    lines = text.strip().splitlines()
    if not lines:
        raise ValidationError("empty trace")
    if lines[0].strip() != TRACE_HEADER:
        raise ParseError(f"expected header {TRACE_HEADER!r}, got {lines[0]!r}", line=1)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 fields, got {len(parts)}", line=i)
        try:
            arrival = float(parts[0])
            prompt = int(parts[1])
            output = int(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=i) from None
        if prompt < 1 or output < 1:
            raise ValidationError(f"line {i}: non-positive token count")
        if arrival < 0:
            raise ValidationError(f"line {i}: negative arrival")
        rows.append((arrival, prompt, output))
    if not rows:
        raise ValidationError("empty trace")
    order = sorted(range(len(rows)), key=lambda k: rows[k][0])  # stable
    requests = [Request(rid, *rows[k]) for rid, k in enumerate(order)]
    return Trace(requests, duration=requests[-1].arrival)


def serialize_trace(trace: Trace) -> str:
    """Render a trace back to its CSV form."""
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    for r in trace.requests:
        buf.write(f"{r.arrival:.6f},{r.prompt_tokens},{r.output_tokens}\n")
    return buf.getvalue()


def generate_trace(prompt_dist: SizeDistribution, output_dist: SizeDistribution,
                   rate: float, duration: float, seed: int) -> Trace:
    """Synthesize a Poisson-arrival trace.

    Inter-arrival gaps are i.i.d. exponential with mean ``1/rate``; sizes
    are drawn independently per request.  Draw order is fixed (arrivals,
    then prompts, then outputs) so a seed pins the whole trace.
    """
    if rate < 0:
        raise ValidationError("rate must be >= 0")
    if duration <= 0:
        raise ValidationError("duration must be > 0")
    rng = _rng(seed)
    arrivals: list[float] = []
    if rate > 0:
        t = 0.0
        while True:
            chunk = rng.exponential(1.0 / rate, size=max(256, int(rate * duration * 0.2) + 1))
            cum = t + np.cumsum(chunk)
            inside = cum[cum <= duration]
            arrivals.extend(inside.tolist())
            if len(inside) < len(cum):
                break
            t = cum[-1]
    n = len(arrivals)
    prompts, c1 = prompt_dist.sample(rng, n)
    outputs, c2 = output_dist.sample(rng, n)
    requests = [Request(i, arrivals[i], int(prompts[i]), int(outputs[i])) for i in range(n)]
    return Trace(requests, duration=float(duration), clamped_samples=c1 + c2)


def _lower_median(sorted_vals):
    return sorted_vals[(len(sorted_vals) - 1) // 2]


def _nearest_rank(sorted_vals, p):
    return sorted_vals[max(0, math.ceil(p * len(sorted_vals)) - 1)]


def trace_stats(trace: Trace) -> dict:
    """Summary stats: lower-median and nearest-rank P90 sizes, mean rate."""
    if not trace.requests:
        raise ValidationError("empty trace")
    prompts = sorted(r.prompt_tokens for r in trace.requests)
    outputs = sorted(r.output_tokens for r in trace.requests)
    duration = trace.duration if trace.duration > 0 else trace.requests[-1].arrival
    return {
        "count": len(trace.requests),
        "median_prompt_tokens": _lower_median(prompts),
        "p90_prompt_tokens": _nearest_rank(prompts, 0.9),
        "median_output_tokens": _lower_median(outputs),
        "p90_output_tokens": _nearest_rank(outputs, 0.9),
        "mean_rate": len(trace.requests) / duration if duration > 0 else 0.0,
    }
