#!/usr/bin/env python3
"""Time decoding plus pyramid construction against loading the pyramid cache."""

import argparse
import tempfile

from ngfreg.experiments import benchmark_cache


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=8000, help="edge length of the square test image")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as d:
        bench = benchmark_cache(d, args.size, args.repeats)
    print(f"{args.size}x{args.size}: decode+pyramid {bench['decode_seconds']:.2f} s, "
          f"cache {bench['cache_seconds']:.2f} s, speedup {bench['speedup']:.1f}x")


if __name__ == "__main__":
    main()
