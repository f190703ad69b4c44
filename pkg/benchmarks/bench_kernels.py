"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np
from scipy.interpolate import CubicSpline

from cavmem import kernels


def _poly(x, y):
    return np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(CubicSpline(x, y).c, dtype=complex)


def integrate_case():
    rng = np.random.default_rng(0)
    x = np.linspace(0.0, 8.0, 33)
    ox, oc = _poly(x, 2.0 * rng.normal(size=x.size) + 1j * rng.normal(size=x.size))
    xe = np.linspace(0.0, 8.0, 201)
    ex, ec = _poly(xe, np.exp(-(xe - 4.0) ** 2))
    p = np.array([1.3, 1.2, 2.0, 0.3, 0.2, 1.5, 0.8, 0.4, 0.8])
    y0 = np.array([0.1, 0.2j, 0.9, 0, 0], dtype=complex)

    def run(mod):
        return mod.integrate(kernels.FULL, 0.0, 8.0, y0, p, ox, oc, ex, ec, 1e-10, 1e-12, 0.0, 0.05,
                             2_000_000, True)
    return run


def rk4_case(K=2000):
    rng = np.random.default_rng(1)
    om = rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)
    ein = np.exp(-np.linspace(-3, 3, 2 * K + 1) ** 2).astype(complex)
    h = np.full(K, 6.0 / K)

    def run(mod):
        return mod.rk4_storage_grad(om, ein, h, 1.0, 0.3)
    return run


def best_of(fn, mod, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(mod)
        out.append(time.perf_counter() - t0)
    return min(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)
    mods = {"python": kernels.backend_module("python")}
    try:
        mods["cython"] = kernels.backend_module("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<18}{'backend':<10}{'seconds':>12}")
    for name, fn in (("integrate", integrate_case()), ("rk4_storage_grad", rk4_case())):
        times = {}
        for b, mod in mods.items():
            times[b] = best_of(fn, mod, a.repeat)
            print(f"{name:<18}{b:<10}{times[b]:>12.4f}")
        if len(times) == 2:
            print(f"{name:<18}{'speedup':<10}{times['python'] / times['cython']:>12.1f}")


if __name__ == "__main__":
    main()
