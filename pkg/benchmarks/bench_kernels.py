"""Compiled vs pure-numpy kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 4096]

Prints best-of-repeat wall time per kernel and backend plus the speedup.
"""

import argparse
import timeit

import numpy as np
import scipy.sparse as sp

from homwave import kernels


def csr32(A):
    A = sp.csr_matrix(A)
    return A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data.astype(float)


def cases(n: int):
    rng = np.random.default_rng(0)
    h = 1.0 / (n + 1)
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h
    M = np.full(n, h)
    dt, gamma = 0.5 * h, 0.5
    S = (1 + 0.5 * gamma * dt) * sp.diags(M) + 0.25 * dt * dt * K
    Kc, Sc = csr32(K), csr32(S)
    b = rng.normal(size=n)
    u0 = np.sin(np.pi * np.arange(1, n + 1) * h)
    g = np.ones(n)
    A = rng.normal(size=(2000, 64))
    B = rng.normal(size=(2000, 64))
    pts = rng.random((2000, 1))
    vals = np.sin(7 * pts[:, 0])
    pi = rng.integers(0, 2000, 20000).astype(np.int64)
    pj = rng.integers(0, 2000, 20000).astype(np.int64)

    def cg(be):
        be.cg_csr(*Kc, b, np.zeros(n), 1e-10, 10 * n)

    def wave(be):
        be.wave_advance(*Kc, *Sc, *Kc, M, u0.copy(), np.zeros(n), g, 0.0, 1.0, gamma, dt, 200,
                        1e-10, 1000, 1e8, 16)

    def haus(be):
        be.directed_hausdorff(A, B)

    def holder(be):
        be.holder_seminorm(vals, pts, pi, pj, 0.25)

    return {"cg_csr": cg, "wave_advance (200 steps)": wave, "directed_hausdorff 2000x2000x64": haus,
            "holder_seminorm 2e4 pairs": holder}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=4096)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in sorted(backends)) + "     speedup")
    for name, fn in cases(args.n).items():
        t = {b: min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat)) for b, be in backends.items()}
        row = f"{name:34s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in sorted(backends))
        if "compiled" in t:
            row += f"  {t['python'] / t['compiled']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
