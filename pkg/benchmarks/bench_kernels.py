"""Compare the numba kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--n 128] [--repeat 3]``.
Both paths are called directly, so the environment flag does not matter here.
"""

import argparse
import time

import numpy as np

from mixlag import _kernels
from mixlag._backend import HAVE_NUMBA
from mixlag.mesh import Assembler, Boundary, build_mesh


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_integrate(npts, steps, repeat):
    rng = np.random.default_rng(0)
    px = rng.uniform(0.05, 0.95, npts)
    py = rng.uniform(0.05, 0.95, npts)
    nrec = 17
    stride = max(1, steps // (nrec - 1))
    h = 1.0 / (stride * (nrec - 1))

    def run(fn):
        X = np.empty((nrec, npts))
        Y = np.empty((nrec, npts))
        J = np.empty((nrec, npts, 4))
        fn(_kernels.KIND_DOUBLE_GYRE, 1.0, px, py, 0.0, h, nrec, stride, X, Y, J)
        return J

    out = {"numpy": best_of(lambda: run(_kernels.integrate_numpy), repeat)}
    if HAVE_NUMBA:
        run(_kernels.integrate_numba)               # compile
        out["numba"] = best_of(lambda: run(_kernels.integrate_numba), repeat)
        diff = np.abs(run(_kernels.integrate_numba) - run(_kernels.integrate_numpy)).max()
        out["max_abs_diff"] = float(diff)
    return out


def bench_assembly(n, repeat):
    mesh = build_mesh(n, Boundary.PERIODIC)
    asm = Assembler(mesh)
    rng = np.random.default_rng(1)
    c = np.stack([1 + rng.random(mesh.n_nodes), 0.1 * rng.random(mesh.n_nodes),
                  1 + rng.random(mesh.n_nodes)], axis=1)
    coef = np.ascontiguousarray(asm.triangle_tensors(c))

    def run(local_fn, scatter_fn):
        loc = local_fn(mesh.grads, asm.weight, coef)
        return scatter_fn(asm.index, loc.ravel(), asm.nnz)

    out = {"numpy": best_of(lambda: run(_kernels.local_stiffness_numpy, _kernels.scatter_numpy),
                            repeat)}
    if HAVE_NUMBA:
        run(_kernels.local_stiffness_numba, _kernels.scatter_numba)
        out["numba"] = best_of(lambda: run(_kernels.local_stiffness_numba, _kernels.scatter_numba),
                               repeat)
        a = run(_kernels.local_stiffness_numba, _kernels.scatter_numba)
        b = run(_kernels.local_stiffness_numpy, _kernels.scatter_numpy)
        out["max_abs_diff"] = float(np.abs(a - b).max())
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128, help="mesh size (points = (n+1)^2)")
    ap.add_argument("--steps", type=int, default=400, help="RK4 steps on [0, 1]")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    npts = (args.n + 1) ** 2
    rows = [("flow maps + jacobians", bench_integrate(npts, args.steps, args.repeat)),
            ("stiffness assembly", bench_assembly(args.n, args.repeat))]
    print(f"{'kernel':<24}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, r in rows:
        nb = r.get("numba", float("nan"))
        print(f"{name:<24}{r['numpy']:>12.4f}{nb:>12.4f}{r['numpy'] / nb:>10.1f}"
              f"{r.get('max_abs_diff', float('nan')):>12.2e}")


if __name__ == "__main__":
    main()
