"""Compare the compiled kernels against the NumPy fallback.

Run ``python benchmarks/bench_kernels.py [--cells N] [--repeat R]``. Each kernel is
fed the array shapes it sees during assembly on a degree-2 quadrilateral mesh
(9 basis functions, 25 quadrature points). The script checks that both
backends agree before timing them.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from otmesh._kernels import compiled_backend, numpy_backend


def make_inputs(n_cells: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    nb, Q, n = 9, 25, 4 * n_cells
    dof_map = rng.integers(0, n, size=(n_cells, nb))
    table = rng.random((Q, nb))
    dtable = rng.standard_normal((Q, nb, 2))
    pullback = rng.standard_normal((n_cells, Q, 2, 2))
    coeffs = rng.standard_normal((4, n))
    weighted = rng.standard_normal((n_cells, Q, 4))
    weighted_g = rng.standard_normal((n_cells, Q, 4, 2))
    w = rng.random((n_cells, Q))
    T = np.broadcast_to(table, (1, Q, nb)).copy()
    A2 = rng.standard_normal((n_cells, Q, 2, 2))
    A3 = rng.standard_normal((n_cells, Q, 3, 3))
    xi = rng.standard_normal((n_cells, Q, 3))
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    g = rng.standard_normal((n_cells, Q, 3)) * 0.3
    g -= np.sum(g * xi, axis=-1, keepdims=True) * xi
    local = rng.standard_normal((n_cells, nb))
    return {
        "scatter_add": (dof_map, local, n),
        "gather_eval": (coeffs, dof_map, table),
        "gather_grad": (coeffs, dof_map, dtable, pullback),
        "integrate_test": (dof_map, table, weighted, n),
        "integrate_test_grad": (dof_map, dtable, pullback, weighted_g, n),
        "local_matrices": (w, T, T),
        "det_adj2": (A2,),
        "det_adj3": (A3,),
        "expmap_points": (xi, g, 1.0),
        "sphere_det_adj": (A3, xi + g, xi, 1.0),
    }


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=3600)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled_backend is None:
        print("compiled kernels are not built; only the NumPy fallback is available")
        return 1
    inputs = make_inputs(args.cells)
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'compiled [ms]':>15}{'speedup':>10}{'max diff':>12}")
    for name, arg in inputs.items():
        f_np, f_c = getattr(numpy_backend, name), getattr(compiled_backend, name)
        diff = _max_diff(f_np(*arg), f_c(*arg))
        t_np = min(timeit.repeat(lambda: f_np(*arg), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: f_c(*arg), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_np:>12.2f}{t_c:>15.2f}{t_np / t_c:>10.1f}{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
