"""Time the compiled and pure-Python rank-sum and agreement kernels.

    python benchmarks/bench_kernels.py [--members 5] [--batch 10000] [--classes 10]

Shapes default to one MNIST test pass of a 5-member ensemble. Both backends
are checked for identical results before timing.
"""
import argparse
import timeit

import numpy as np

from dissent import _kernels_py

try:
    from dissent import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def best_of(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--members", type=int, default=5)
    p.add_argument("--batch", type=int, default=10000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    probs = rng.dirichlet(np.ones(args.classes), size=(args.members, args.batch))
    backends = {"python": _kernels_py}
    if _kernels_c is None:
        print("compiled extension not built; timing the Python backend only")
    else:
        backends["cython"] = _kernels_c
        np.testing.assert_array_equal(_kernels_c.rank_sums(probs), _kernels_py.rank_sums(probs))
        ja_c, g_c = _kernels_c.agreement(probs)
        ja_p, g_p = _kernels_py.agreement(probs)
        np.testing.assert_allclose(ja_c, ja_p, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(g_c, g_p, rtol=1e-12, atol=1e-15)

    print(f"N={args.members} B={args.batch} K={args.classes}, best of {args.repeat}")
    print(f"{'kernel':<12}{'backend':<10}{'ms':>10}{'speedup':>10}")
    for name in ("rank_sums", "agreement"):
        times = {b: best_of(lambda m=mod: getattr(m, name)(probs), args.repeat) for b, mod in backends.items()}
        for b, t in times.items():
            speed = times["python"] / t
            print(f"{name:<12}{b:<10}{1e3 * t:>10.2f}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
