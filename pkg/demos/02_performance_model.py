#!/usr/bin/env python3
"""Explore the calibrated per-iteration performance model.

Prints prompt-phase and token-phase iteration times for the built-in
machine types, shows how token time grows with batch size, and reports
the memory-limited maximum token batch derived from KV-cache arithmetic.
"""

import argparse

from splitsim import MACHINE_SPECS, get_calibration


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--llm", default="llama2-70b")
    args = parser.parse_args()

    types = ("A100", "H100", "H100cap")
    models = {t: get_calibration(args.llm, t) for t in types}

    print(f"model: {args.llm}")
    print(f"  kv bytes/token: {models['H100'].kv_bytes_per_token:,.0f}")
    for t in types:
        spec = MACHINE_SPECS[t]
        m = models[t]
        print(f"  {t}: memory {spec.memory_capacity/1e9:.0f} GB, "
              f"weights {m.weight_memory/1e9:.0f} GB, "
              f"max token batch {m.max_token_batch}")

    print("\nprompt phase time (ms), batch of one prompt:")
    sizes = [128, 512, 1020, 1500, 2048, 4096, 8192]
    print("  tokens " + "".join(f"{s:>8}" for s in sizes))
    for t in types:
        row = "".join(f"{models[t].prompt_time(s):8.1f}" for s in sizes)
        print(f"  {t:<7}{row}")

    print("\ntoken phase time (ms) per iteration vs batch size:")
    batches = [1, 2, 4, 8, 16, 32, 64]
    print("  batch  " + "".join(f"{b:>8}" for b in batches))
    for t in types:
        row = "".join(f"{models[t].token_iter_time(b):8.1f}" for b in batches)
        print(f"  {t:<7}{row}")

    m = models["H100"]
    print("\nbatching efficiency on H100:")
    print(f"  64 tokens one at a time: {64 * m.token_iter_time(1):.0f} ms")
    print(f"  one batch of 64:         {m.token_iter_time(64):.0f} ms")
    print(f"  speedup: {64 * m.token_iter_time(1) / m.token_iter_time(64):.1f}x")


if __name__ == "__main__":
    main()
