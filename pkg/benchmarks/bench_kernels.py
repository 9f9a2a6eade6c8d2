"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from geps.diffcore import kernels


def cases(rng):
    x1 = rng.standard_normal((8, 256, 16))
    x2 = rng.standard_normal((4, 32, 32, 16))
    u, v = rng.uniform(size=(64, 64)), rng.uniform(size=(64, 64))
    c1 = rng.standard_normal((8, 256, 3 * 16))
    c2 = rng.standard_normal((4, 32 * 32, 9 * 16))
    return {
        "unfold1d k=3": lambda m: m.unfold1d(x1, 3),
        "fold1d k=3": lambda m: m.fold1d(c1, 3, 16),
        "unfold2d k=3": lambda m: m.unfold2d(x2, 3),
        "fold2d k=3": lambda m: m.fold2d(c2, 3, 32, 32, 16),
        "gray_scott 64x64": lambda m: m.gray_scott_rhs(u, v, 0.03, 0.062, 0.2097, 0.105, 0.25),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    impls = {"python": kernels.implementation("python")}
    try:
        impls["cython"] = kernels.implementation("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in impls.items():
            fn(mod)
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = f"{label:<20}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times.values())
        if "cython" in times:
            line += f"{times['python'] / times['cython']:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
