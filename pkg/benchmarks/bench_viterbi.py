"""Compare the compiled and pure-numpy Viterbi forward passes.

    python benchmarks/bench_viterbi.py --frames 100 300 --centroids 10 50

Prints one row per (variant, T, K) with the best-of-``--repeat`` wall time
of each backend and their ratio.  Both backends must produce bit-identical
lattices; the script checks that before timing.
"""
import argparse
import sys
import time

import numpy as np

from phoneseg import viterbi
from phoneseg.hmm import HmmConfig, decode_with_fixed_centroids


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, nargs="+", default=[100, 300, 600])
    ap.add_argument("--centroids", type=int, nargs="+", default=[10, 50])
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if viterbi.compiled_forward is None:
        print("compiled backend not built; reinstall with Cython available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'variant':>7} {'T':>5} {'K':>4} {'cython_s':>10} {'python_s':>10} {'speedup':>8}")
    for variant in ("DP", "Nseg"):
        for T in args.frames:
            for K in args.centroids:
                x = rng.normal(size=(T, args.dim))
                c = rng.normal(size=(K, args.dim))
                cfg = HmmConfig(K=K, variant=variant, lam=1.0, L=8.0)
                a = decode_with_fixed_centroids(x, c, cfg, backend="cython", keep_lattice=True)
                b = decode_with_fixed_centroids(x, c, cfg, backend="python", keep_lattice=True)
                if not (np.array_equal(a.lattice.final, b.lattice.final)
                        and np.array_equal(a.lattice.stay, b.lattice.stay)):
                    print(f"backends disagree at {variant} T={T} K={K}", file=sys.stderr)
                    return 2
                tc = best_time(lambda: decode_with_fixed_centroids(x, c, cfg, backend="cython"), args.repeat)
                tp = best_time(lambda: decode_with_fixed_centroids(x, c, cfg, backend="python"), args.repeat)
                print(f"{variant:>7} {T:>5} {K:>4} {tc:>10.4f} {tp:>10.4f} {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
