"""Benchmark the compiled kernel extension against the numpy fallback.

Usage: python3 bench/bench_kernels.py [--repeats 200] [--rows 512] [--cols 256]

Times each hot kernel on identical inputs with both backends and prints a
table of per-call medians plus the speedup. Also asserts the two backends
agree numerically, so the benchmark doubles as a parity check.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from ecvlroute.nn import kernels_py

try:
    from ecvlroute.nn import _kernels as kernels_c
except ImportError:
    kernels_c = None


def bench(fn, args, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def make_cases(rows, cols, rng):
    x = rng.normal(size=(rows, cols))
    dy = rng.normal(size=(rows, cols))
    gamma = rng.normal(size=cols)
    beta = rng.normal(size=cols)
    _, mean, rstd = kernels_py.layernorm_forward(x, gamma, beta)
    s = rng.normal(size=(rows, cols))
    p = kernels_py.softmax_forward(s)
    logits = rng.normal(size=rows)
    targets = rng.integers(0, 2, rows).astype(np.float64)
    param = rng.normal(size=rows * cols)
    grad = rng.normal(size=rows * cols)
    m = np.zeros(rows * cols)
    v = np.zeros(rows * cols)
    return [
        ("layernorm_forward", (x, gamma, beta)),
        ("layernorm_backward", (dy, x, gamma, mean, rstd)),
        ("softmax_forward", (s,)),
        ("softmax_backward", (dy, p)),
        ("relu_forward", (x,)),
        ("relu_backward", (dy, np.maximum(x, 0.0))),
        ("sigmoid_bce", (logits, targets)),
        ("adam_step", (param.copy(), grad, m.copy(), v.copy(),
                       1e-3, 0.9, 0.999, 1e-8, 1)),
    ]


def check_parity(name, args):
    a = kernels_py.__dict__[name](*[np.copy(x) if isinstance(x, np.ndarray)
                                    else x for x in args])
    b = kernels_c.__dict__[name](*[np.copy(x) if isinstance(x, np.ndarray)
                                   else x for x in args])
    flat_a = a if isinstance(a, tuple) else (a,)
    flat_b = b if isinstance(b, tuple) else (b,)
    for xa, xb in zip(flat_a, flat_b):
        if xa is None:
            continue
        np.testing.assert_allclose(xa, xb, rtol=1e-12, atol=1e-12)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--rows", type=int, default=512)
    parser.add_argument("--cols", type=int, default=256)
    args = parser.parse_args()

    if kernels_c is None:
        raise SystemExit("compiled extension not built; nothing to compare")

    rng = np.random.default_rng(0)
    cases = make_cases(args.rows, args.cols, rng)
    print(f"rows={args.rows} cols={args.cols} repeats={args.repeats}")
    print(f"{'kernel':<22}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for name, call_args in cases:
        check_parity(name, call_args)
        t_py = bench(kernels_py.__dict__[name], call_args, args.repeats)
        t_c = bench(kernels_c.__dict__[name], call_args, args.repeats)
        print(f"{name:<22}{t_py * 1e6:>10.1f}us{t_c * 1e6:>10.1f}us"
              f"{t_py / t_c:>9.2f}x")


if __name__ == "__main__":
    main()
