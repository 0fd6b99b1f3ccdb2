"""Compiled vs numpy parallel-tempering kernels.

    python benchmarks/bench_kernels.py [--n 32] [--replicas 16] [--rounds 2000]

Both backends consume identical random streams, so the script also checks that
they return the same samples.
"""

import argparse
import time

import numpy as np

from glassflow import kernels
from glassflow.core import draw_sk_disorder
from glassflow.sampler import TemperatureLadder, run_pt


def time_backend(d, ladder, rounds, backend, threads, repeats):
    best = float("inf")
    run = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        run = run_pt(d, ladder, 0, rounds, seed=0, n_threads=threads, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--replicas", type=int, default=16)
    ap.add_argument("--rounds", type=int, default=2000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    d = draw_sk_disorder(args.n, seed=0)
    ladder = TemperatureLadder.geometric(0.2, 5.0, args.replicas)
    flips = args.rounds * args.replicas * args.n
    results = {}
    for name in kernels.available_backends():
        secs, run = time_backend(d, ladder, args.rounds, name, args.threads, args.repeats)
        results[name] = (secs, run)
        print(f"{name:9s} {secs:8.3f} s  {flips / secs / 1e6:8.2f} Mflip/s")
    if len(results) == 2:
        a, b = results["compiled"][1], results["python"][1]
        same = all(np.array_equal(x.spins, y.spins) for x, y in zip(a.samples, b.samples))
        print(f"speedup {results['python'][0] / results['compiled'][0]:.1f}x, identical samples: {same}")


if __name__ == "__main__":
    main()
