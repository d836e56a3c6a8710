"""Compare the compiled and NumPy element kernels on periodic checkerboard grids.

Usage: python3 benchmarks/bench_kernels.py [--sizes 256,512,1024] [--repeat 5]
"""

import argparse
import time

import numpy as np

from homog import kernels
from homog.discretize import Mesh, Q1Operator
from homog.model import CoefficientField, LatticeSpec, OperatorSymbol


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="256,512,1024")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    lat = LatticeSpec.cubic(2)
    sym = OperatorSymbol.grad(2)
    field = CoefficientField("checkerboard", 2, 2, {})
    rng = np.random.default_rng(0)
    print(f"compiled kernel available: {kernels.HAVE_COMPILED}")
    print(f"{'nodes':>10} {'numpy [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max diff':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        mesh = Mesh.torus((1.0, 1.0), (n, n))
        op = Q1Operator.oscillating(mesh, sym, field, lat, 1.0 / 8)
        u = rng.standard_normal(op.shape)
        ref = kernels.apply_elements(u, op.ke, op.elem_id, backend="numpy")
        t_np = best_time(lambda: kernels.apply_elements(u, op.ke, op.elem_id, backend="numpy"), args.repeat)
        if kernels.HAVE_COMPILED:
            out = kernels.apply_elements(u, op.ke, op.elem_id, backend="compiled")
            t_c = best_time(lambda: kernels.apply_elements(u, op.ke, op.elem_id, backend="compiled"), args.repeat)
            diff = float(np.abs(out - ref).max())
            print(f"{n * n:>10} {t_np:>11.4f} {t_c:>13.4f} {t_np / t_c:>8.2f} {diff:>10.2e}")
        else:
            print(f"{n * n:>10} {t_np:>11.4f} {'-':>13} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
