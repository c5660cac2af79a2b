"""Time the compiled kernels against their pure-Python twins.

Run ``python benchmarks/bench_core.py``; add ``--sizes 10,50`` to change the
problem sizes or ``--repeat`` for more timing samples.
"""

import argparse
import timeit

import numpy as np

from weightrecon import _core_py

try:
    from weightrecon import _core
except ImportError:  # extension not built
    _core = None


def time_call(fn, arg, repeat):
    return min(timeit.repeat(lambda: fn(arg), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="10,50,100,200")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _core is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<22}{'n':>6}{'python [s]':>14}{'cython [s]':>14}{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        cost = rng.random((n, n))
        a = rng.standard_normal((n, n))
        sym = a + a.T
        for name, arg in (("linear_sum_assignment", cost), ("jacobi_eigh", sym)):
            slow = time_call(getattr(_core_py, name), arg, args.repeat)
            fast = time_call(getattr(_core, name), arg, args.repeat)
            print(f"{name:<22}{n:>6}{slow:>14.4g}{fast:>14.4g}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
