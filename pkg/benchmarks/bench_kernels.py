"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--n 500 2000 10000] [--repeat 200]

Prints one CSV row per (kernel, n, backend) with the median time per call in
microseconds, followed by the speed-up of the compiled backend.
"""

import argparse
import sys
import timeit

import numpy as np

from genpolicy import _kernels_py

try:
    from genpolicy import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None


def _problem(n, d=6, seed=0):
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))]))
    alpha, beta = rng.normal(size=n), rng.normal(size=n)
    theta = rng.normal(size=d)
    return x, theta, alpha, beta, rng


def _median_us(fn, repeat):
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return 1e6 * float(np.median(times))


def bench(n, repeat):
    x, theta, alpha, beta, rng = _problem(n)
    w = np.full(n, 1.0 / n)
    psi = alpha * (0.5 * np.tanh(0.5 * (x @ theta)) + 0.5) + beta
    steps = [theta + 1e-3 * rng.normal(size=theta.size) for _ in range(8)]
    rows = []
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    for name, mod in backends:
        rows.append(("worst_case", n, name, _median_us(lambda: mod.worst_case(psi, 0.6, 3.0), repeat)))
        rows.append(("objective_terms", n, name, _median_us(
            lambda: mod.objective_terms(x, theta, alpha, beta, 0, 1e-3, 0.6, 3.0, w), repeat)))
        hint = np.arange(n, dtype=np.intp)
        it = iter(range(10**9))

        def hinted():
            # successive nearby iterates, as inside a line search
            mod.objective_terms(x, steps[next(it) % 8], alpha, beta, 0, 1e-3, 0.6, 3.0, w, hint)

        rows.append(("objective_terms_hinted", n, name, _median_us(hinted, repeat)))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[500, 2000, 10000])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the numpy fallback is timed", file=sys.stderr)
    print("kernel,n,backend,median_us")
    table = {}
    for n in args.n:
        for kernel, nn, backend, us in bench(n, args.repeat):
            table[kernel, nn, backend] = us
            print(f"{kernel},{nn},{backend},{us:.1f}")
    if _compiled is not None:
        print()
        print("kernel,n,speedup")
        for (kernel, nn, backend), us in table.items():
            if backend == "cython":
                print(f"{kernel},{nn},{table[kernel, nn, 'python'] / us:.2f}")


if __name__ == "__main__":
    main()
