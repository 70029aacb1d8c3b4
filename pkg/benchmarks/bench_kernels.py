"""Compare the compiled and numpy cell-update kernels.

Run with ``python benchmarks/bench_kernels.py [--cells 220] [--repeats 50]``.
Both kernels get identical inputs; the script checks that their outputs agree
and prints the time per sweep and the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from saemort.svd import _kernels_py

try:
    from saemort.svd import _kernels
except ImportError:  # extension not built
    _kernels = None


def make_inputs(cells: int, groups: int = 21, comps: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    V = np.linalg.qr(rng.standard_normal((groups, comps)))[0].T.copy()
    beta = np.column_stack([np.full(cells, -20.0), np.ones(cells), np.full(cells, 0.5)])[:, :comps]
    beta += 0.1 * rng.standard_normal(beta.shape)
    N = np.full((cells, groups), 1e5 / groups)
    D = rng.poisson(N * np.exp(beta @ V)).astype(float)
    mu = beta + 0.05 * rng.standard_normal(beta.shape)
    pb = np.full((cells, comps), 100.0)
    pu = np.full(groups, 400.0)
    z = rng.standard_normal((cells, 2, comps + groups))
    logU = np.log(rng.uniform(size=(cells, 2)))
    scale = np.full(cells, 0.5)
    return D, N, V, mu, pb, pu, beta, np.zeros((cells, groups)), z, logU, scale


def run(kernel, inputs, repeats: int):
    D, N, V, mu, pb, pu, beta, u, z, logU, scale = inputs
    best = np.inf
    out = None
    for _ in range(repeats):
        b, uu, mb, mu_ = beta.copy(), u.copy(), beta.copy(), u.copy()
        t0 = time.perf_counter()
        acc = kernel.update_cells(D, N, V, mu, pb, pu, b, uu, mb, mu_, z, logU, scale)
        best = min(best, time.perf_counter() - t0)
        out = (b, uu, np.asarray(acc))
    return best, out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=220)
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args(argv)
    inputs = make_inputs(args.cells)
    t_py, out_py = run(_kernels_py, inputs, args.repeats)
    print(f"python   {t_py * 1e3:9.3f} ms/sweep  ({args.cells} cells)")
    if _kernels is None:
        print("compiled kernel not available")
        return
    t_c, out_c = run(_kernels, inputs, args.repeats)
    print(f"compiled {t_c * 1e3:9.3f} ms/sweep  ({args.cells} cells)")
    print(f"speed-up {t_py / t_c:9.1f}x")
    agree = all(np.allclose(a, b, rtol=1e-8, atol=1e-8) for a, b in zip(out_py, out_c))
    print(f"outputs agree: {agree}")


if __name__ == "__main__":
    main()
