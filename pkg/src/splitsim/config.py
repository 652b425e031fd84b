"""Flat namespaced key=value run configuration.

Files hold one ``section.key = value`` assignment per line (``#`` comments
allowed).  Keys are checked against the registry below; unknown keys are
rejected so typos fail loudly.  Command-line flags override file values.
"""

from __future__ import annotations

import math

from .errors import ConfigurationError

# key -> (type, default).  None default means "unset".
KNOWN_KEYS = {
    "run.trace": (str, None),
    "run.profile": (str, None),
    "run.output_dir": (str, "."),
    "run.llm": (str, "llama2-70b"),
    "run.seed": (int, 0),
    "cluster.design": (str, "Baseline-A100"),
    "cluster.prompt_machines": (int, 1),
    "cluster.token_machines": (int, 0),
    "cluster.prompt_type": (str, None),
    "cluster.token_type": (str, None),
    "mls.prompt_token_cap": (int, 2048),
    "mls.max_preemptions": (int, 4),
    "mls.aging_rate": (float, 1.0),
    "mls.mixing_rule": (str, "sum"),
    "cls.queue_threshold_tokens": (int, 4096),
    "cls.repurpose_window_s": (float, 300.0),
    "cls.repurpose_fraction": (float, 0.5),
    "transfer.bandwidth_gbps": (float, None),
    "transfer.threshold_tokens": (int, None),
    "transfer.layerwise_constant_ms": (float, None),
    "prompt_dist.kind": (str, "lognormal"),
    "prompt_dist.mu": (float, math.log(1500)),
    "prompt_dist.sigma": (float, 1.1),
    "prompt_dist.min": (int, 512),
    "prompt_dist.max": (int, 8192),
    "output_dist.kind": (str, "lognormal"),
    "output_dist.mu": (float, math.log(13)),
    "output_dist.sigma": (float, 0.8),
    "output_dist.min": (int, 1),
    "output_dist.max": (int, 4096),
    "output_dist.weight2": (float, 0.0),
    "output_dist.mu2": (float, 0.0),
    "output_dist.sigma2": (float, 1.0),
}


def parse_config(text: str) -> dict:
    """Parse config text into a typed dict; unknown keys raise."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        typ, _default = KNOWN_KEYS[key]
        try:
            values[key] = typ(val)
        except ValueError:
            raise ConfigurationError(
                f"config line {lineno}: cannot parse {val!r} as {typ.__name__}") from None
    return values


def load_config(path: str | None) -> dict:
    """Load a config file (or nothing) on top of the registry defaults."""
    values = {k: d for k, (_t, d) in KNOWN_KEYS.items()}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config(fh.read()))
    return values
