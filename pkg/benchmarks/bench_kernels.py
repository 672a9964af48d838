"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20] [--devices 8 12 16]
"""

from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from spotafl import _kernels


def search_args(rng: np.random.Generator, n: int) -> tuple:
    p = rng.rayleigh(1.0, n) * math.sqrt(5.0)
    q = rng.rayleigh(1.0, n) * math.sqrt(5.0)
    return (p, p * p, q * q, 21840, 1.0, 1.0, math.sqrt(2 * math.log(25.0)), 12.0, 10.0, 1.5, False)


def bench(name: str, fn, repeat: int) -> float:
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e6


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--devices", type=int, nargs="+", default=[8, 12, 16])
    args = parser.parse_args()

    names = _kernels.available()
    if "cython" not in names:
        print("compiled kernels are not built; only the fallback will be timed")
    mods = {name: _kernels.backend(name) for name in names}
    rng = np.random.default_rng(0)

    print(f"{'kernel':<22}" + "".join(f"{n + ' (us)':>16}" for n in names) + f"{'speedup':>10}")
    rows = []
    for n in args.devices:
        sargs = search_args(rng, n)
        order = np.argsort(sargs[0], kind="stable")
        rows.append((f"esm_search N={n}", {k: (lambda m=m, a=sargs: m.esm_search(*a)) for k, m in mods.items()}))
        rows.append((f"spa_search N={n}", {k: (lambda m=m, a=sargs, o=order: m.spa_search(o, *a)) for k, m in mods.items()}))
    lo = rng.uniform(-30, 10, 4096)
    hi = lo + rng.uniform(0.1, 10, 4096)
    rows.append(("truncnorm_mean 4096", {k: (lambda m=m: m.truncnorm_mean(lo, hi)) for k, m in mods.items()}))
    nodes, weights = np.polynomial.legendre.leggauss(64)
    u = np.linspace(0.0, 5.0, 64)
    rows.append(("xi_inner 64x64", {k: (lambda m=m: m.xi_inner(u, 5.0, nodes * 8 + 2.5, weights * 8))
                                    for k, m in mods.items()}))

    for label, fns in rows:
        times = {k: bench(label, fn, args.repeat) for k, fn in fns.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<22}" + "".join(f"{times[k]:>16.1f}" for k in names) + f"{speed:>10.1f}")


if __name__ == "__main__":
    main()
