"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Shapes follow one A1 training step on CIFAR-10 (batch 256, 3072 inputs,
100 hidden units, e = 3). Each pair of results is also checked for bit
equality.
"""
import argparse
import time

import numpy as np

from majority_kernels.numeric import RngStream, backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = RngStream(0)
    x = np.maximum(rng.normal((256, 3072)), 0.0)
    w = rng.normal((3072, 100, 3))
    p = rng.exponential((3072, 100, 3))
    p /= p.sum(axis=2, keepdims=True)
    w2 = np.ascontiguousarray(w[:, :, 0])
    dz = rng.normal((256, 100))
    cases = {
        "matmul forward (256x3072 @ 3072x100)": lambda impl: impl.matmul(x, w2),
        "matmul grad (3072x256 @ 256x100)": lambda impl: impl.matmul(np.ascontiguousarray(x.T), dz),
        "aggregate (3072x100x3)": lambda impl: impl.aggregate(w, p),
        "collapse (3072x100x3)": lambda impl: impl.collapse(w),
    }
    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; only the fallback is timed")
    header = f"{'kernel':<40}" + "".join(f"{name:>12}" for name in impls) + "   speedup  bit-equal"
    print(header)
    for label, fn in cases.items():
        times = {name: best_of(lambda: fn(impl), args.repeat) for name, impl in impls.items()}
        outputs = [fn(impl) for impl in impls.values()]
        equal = all(np.array_equal(outputs[0], o) for o in outputs[1:])
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        row = f"{label:<40}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        print(f"{row}  {speedup:>7.1f}x  {equal}")


if __name__ == "__main__":
    main()
