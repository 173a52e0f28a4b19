"""Timing comparison for the selective-scan kernel backends.

Runs forward and forward+backward passes through both the compiled and
the pure-numpy implementation over a grid of sequence lengths, checks
they agree, and prints a table with speedups.

    python3 benchmarks/bench_scan.py [--batch 4] [--dim 48] [--state 16]
                                     [--lengths 196,784,3136] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from histoscan import kernels


def make_case(rng, batch, length, dim, state, dtype=np.float32):
    u = rng.standard_normal((batch, length, dim)).astype(dtype)
    delta = rng.uniform(0.01, 0.5, (batch, length, dim)).astype(dtype)
    A = rng.uniform(0.5, 2.0, state).astype(dtype)
    Bseq = rng.standard_normal((batch, length, state)).astype(dtype)
    Cseq = rng.standard_normal((batch, length, state)).astype(dtype)
    gy = rng.standard_normal((batch, length, dim)).astype(dtype)
    return u, delta, A, Bseq, Cseq, gy


def time_backend(impl, case, repeats, with_backward):
    u, delta, A, Bseq, Cseq, gy = case
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        y, H = impl.scan_forward(u, delta, A, Bseq, Cseq, with_backward)
        if with_backward:
            impl.scan_backward(u, delta, A, Bseq, Cseq, H, gy)
        times.append(time.perf_counter() - t0)
    return min(times), y


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--dim", type=int, default=48,
                    help="scan width (half the block width)")
    ap.add_argument("--state", type=int, default=16)
    ap.add_argument("--lengths", default="196,784,3136",
                    help="stage grids of the full preset by default")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    try:
        compiled = kernels.get_impl("cython")
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return 1
    python = kernels.get_impl("python")
    rng = np.random.default_rng(args.seed)
    lengths = [int(s) for s in args.lengths.split(",")]

    print(f"batch={args.batch} dim={args.dim} state={args.state} "
          f"repeats={args.repeats} (best-of timing, float32)")
    header = f"{'pass':<12}{'L':>6}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>9}{'max|diff|':>12}"
    print(header)
    print("-" * len(header))
    for with_backward in (False, True):
        label = "fwd+bwd" if with_backward else "forward"
        for L in lengths:
            case = make_case(rng, args.batch, L, args.dim, args.state)
            t_py, y_py = time_backend(python, case, args.repeats, with_backward)
            t_cy, y_cy = time_backend(compiled, case, args.repeats, with_backward)
            diff = float(np.abs(y_py - y_cy).max())
            print(f"{label:<12}{L:>6}{t_py * 1e3:>14.2f}{t_cy * 1e3:>14.2f}"
                  f"{t_py / t_cy:>8.1f}x{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
