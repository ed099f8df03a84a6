"""Time the compiled and numpy lookup walks on the same synthetic cache.

    python benchmarks/bench_lookup.py [--frames 3000] [--repeat 5]
"""
import argparse
import time

import numpy as np

from cocasim import lookup
from cocasim.server import init_global_cache
from cocasim.workload import GroundTruth, emit_samples

CASES = [
    # classes, layers, dim, fraction of cells allocated
    (50, 8, 64, 0.3),
    (50, 8, 64, 1.0),
    (50, 34, 64, 1.0),
    (100, 8, 128, 0.5),
]


def build_case(n_classes, n_layers, dim, fill, frames, seed=0):
    rng = np.random.default_rng(seed)
    truth = GroundTruth.generate(n_classes, n_layers, dim, rng)
    calib = np.repeat(np.arange(n_classes), 20)
    table = init_global_cache(emit_samples(truth, calib, rng), calib, n_classes)
    alloc = table.present & (rng.random(table.present.shape) < fill)
    labels = rng.integers(0, n_classes, frames)
    return emit_samples(truth, labels, rng), lookup.pack_cache(table.entries, alloc), n_classes


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--frames", type=int, default=3000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = lookup.available_backends()
    print(f"backends: {', '.join(sorted(backends))}")
    print(f"{'I':>4} {'L':>3} {'d':>4} {'fill':>5} " + " ".join(f"{b + ' ms':>12}" for b in sorted(backends))
          + "  speedup  same")
    for case in CASES:
        vectors, (ptr, cls, rows), n = build_case(*case, frames=args.frames)
        times, outs = {}, {}
        for name in sorted(backends):
            outs[name] = lookup.walk_frames(vectors, ptr, cls, rows, n, 0.5, 0.012, backend=name)
            times[name] = best_time(lambda: lookup.walk_frames(vectors, ptr, cls, rows, n, 0.5, 0.012,
                                                               backend=name), args.repeat)
        same = ""
        speed = ""
        if "cython" in times:
            speed = f"{times['python'] / times['cython']:7.2f}x"
            same = str(all(np.array_equal(outs["python"][k], outs["cython"][k]) for k in (0, 1)))
        print(f"{case[0]:>4} {case[1]:>3} {case[2]:>4} {case[3]:>5} "
              + " ".join(f"{1000 * times[b]:12.2f}" for b in sorted(backends)) + f"  {speed:>7}  {same}")


if __name__ == "__main__":
    main()
