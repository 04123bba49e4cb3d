"""Compare the compiled kernels with the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--grid 60] [--repeat 5]

Both backends run on the same inputs; the script checks that their results
agree before timing them.
"""

import argparse
import timeit

import numpy as np

from tracefit import _kernels
from tracefit.approx_diag import ilu_factorize
from tracefit.matrix_core import gen_heatflow


def cases(grid):
    A = gen_heatflow(grid, 0.25)
    f = ilu_factorize(A, 0.0, "ilu0")
    L, U = f.L, f.U
    x = np.linspace(-1.0, 1.0, A.n)
    m = np.sort(np.random.default_rng(0).standard_normal(A.n))
    return {
        "csr_matvec": lambda kb: kb.csr_matvec(A.row_ptr, A.col_idx, A.values, x),
        "trapezoid_scan": lambda kb: kb.trapezoid_scan(m, 0, A.n - 1),
        "ilu0": lambda kb: kb.ilu0(A.n, A.row_ptr, A.col_idx, A.values),
        "lower_solve": lambda kb: kb.lower_solve(L.row_ptr, L.col_idx, L.values, x),
        "ilu_inverse_diagonal": lambda kb: kb.ilu_inverse_diagonal(
            L.row_ptr, L.col_idx, L.values, U.row_ptr, U.col_idx, U.values, f.iperm),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--grid", type=int, default=60, help="grid side of the test matrix")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels.compiled_backend is None:
        raise SystemExit("compiled backend not available; build with `pip install -e .`")
    py, cy = _kernels.python_backend, _kernels.compiled_backend
    print(f"matrix: heatflow grid {args.grid} (n={args.grid ** 2})")
    print(f"{'kernel':<22}{'python [ms]':>14}{'compiled [ms]':>15}{'speedup':>10}")
    for name, fn in cases(args.grid).items():
        a, b = fn(py), fn(cy)
        if isinstance(a, tuple):
            assert a == b, name
        else:
            np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-14, err_msg=name)
        number = 3
        tp = min(timeit.repeat(lambda: fn(py), number=number, repeat=args.repeat)) / number
        tc = min(timeit.repeat(lambda: fn(cy), number=number, repeat=args.repeat)) / number
        print(f"{name:<22}{tp * 1e3:>14.3f}{tc * 1e3:>15.3f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
