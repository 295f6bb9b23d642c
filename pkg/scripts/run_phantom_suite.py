#!/usr/bin/env python3
"""Run every phantom through the pipeline and grade it against ground truth.

Exits nonzero if any phantom misses an expected bound, so this doubles as a
quick smoke check after changing the skeleton or feature code.
"""

import argparse
import sys
import time

from caravel.config import RunConfig
from caravel.phantoms import PHANTOM_KINDS, check_ground_truth, default_spec, generate
from caravel.pipeline import analyze_volume


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--strict-literal", action="store_true",
                        help="disable pruning and smoothing before measuring")
    parser.add_argument("--kind", choices=PHANTOM_KINDS, default=None,
                        help="run a single phantom instead of the full set")
    args = parser.parse_args()

    config = RunConfig(strict_literal=args.strict_literal)
    kinds = [args.kind] if args.kind else list(PHANTOM_KINDS)
    failures = 0

    for kind in kinds:
        spec = default_spec(kind)
        volume, truth = generate(spec)
        started = time.perf_counter()
        features, graph = analyze_volume(volume, config)
        elapsed = time.perf_counter() - started
        print(f"\n{kind}  ({volume.data.sum()} voxels, {graph.n_nodes} skeleton nodes, "
              f"{elapsed:.2f}s)")
        if not truth:
            print("  no analytic bounds for this kind")
            continue
        for name, ok, detail in check_ground_truth(features.as_dict(), truth):
            marker = "ok  " if ok else "FAIL"
            print(f"  {marker} {name:28s} {detail}")
            failures += 0 if ok else 1

    print(f"\n{failures} failed bound(s)" if failures else "\nall bounds satisfied")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
