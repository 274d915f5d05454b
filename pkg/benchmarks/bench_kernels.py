#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times each hot kernel on the shapes the deployed (alpha=0.35, N=7) model
actually runs, plus a whole-model forward pass per backend.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from tinyreid import fp32, int8, ptq, store
from tinyreid.kernels import numba_impl, numpy_impl

# (label, op, input shape, kernel shape, stride) on the deployed model
CASES = [
    ("stem 3x3/2",      "conv", (64, 64, 3),   (3, 3, 3, 11),   2),
    ("expand 1x1",      "conv", (32, 32, 8),   (1, 1, 8, 48),   1),
    ("depthwise 3x3/2", "dw",   (32, 32, 48),  (3, 3, 48),      2),
    ("project 1x1",     "conv", (16, 16, 48),  (1, 1, 48, 8),   1),
    ("head 1x1",        "conv", (4, 4, 22),    (1, 1, 22, 1280), 1),
]


def run_case(impl, op, x, k, stride, repeat):
    fn = impl.conv2d_i8 if op == "conv" else impl.depthwise_conv_i8
    fn(x, 0, k, stride)  # warm any JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(x, 0, k, stride)
    return (time.perf_counter() - t0) / repeat


def run_case_f32(impl, op, x, k, stride, repeat):
    fn = impl.conv2d_f32 if op == "conv" else impl.depthwise_conv_f32
    fn(x, k, stride)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(x, k, stride)
    return (time.perf_counter() - t0) / repeat


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'dtype':<6}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    for label, op, xs, ks, stride in CASES:
        xi = rng.integers(-128, 128, size=xs).astype(np.int8)
        ki = rng.integers(-128, 128, size=ks).astype(np.int8)
        t_np = run_case(numpy_impl, op, xi, ki, stride, repeat)
        t_nb = run_case(numba_impl, op, xi, ki, stride, repeat)
        print(f"{label:<18}{'int8':<6}{t_np * 1e6:>10.0f}us{t_nb * 1e6:>10.0f}us"
              f"{t_np / t_nb:>8.2f}x")
        xf = rng.uniform(-1, 1, size=xs).astype(np.float32)
        kf = rng.uniform(-1, 1, size=ks).astype(np.float32)
        t_np = run_case_f32(numpy_impl, op, xf, kf, stride, repeat)
        t_nb = run_case_f32(numba_impl, op, xf, kf, stride, repeat)
        print(f"{label:<18}{'f32':<6}{t_np * 1e6:>10.0f}us{t_nb * 1e6:>10.0f}us"
              f"{t_np / t_nb:>8.2f}x")


def bench_forward(repeat):
    from tinyreid import kernels

    weights = store.generate_random_model(0.35, 7, 128, seed=1)
    rng = np.random.default_rng(1)
    imgs = [rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32) for _ in range(8)]
    qmodel = ptq.quantize_model(weights, ptq.calibrate(weights, imgs))
    img = imgs[0]
    img_q = int8.quantize_image(qmodel, img)

    print(f"\n{'forward pass':<18}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    saved = kernels._impl
    try:
        for label, fn, arg in (
            ("float32", fp32.forward_f32, (weights, img)),
            ("int8", int8.forward_i8, (qmodel, img_q)),
        ):
            times = {}
            for name, impl in (("numpy", numpy_impl), ("numba", numba_impl)):
                kernels._impl = impl
                fn(*arg)
                t0 = time.perf_counter()
                for _ in range(repeat):
                    fn(*arg)
                times[name] = (time.perf_counter() - t0) / repeat
            print(f"{label:<18}{times['numpy'] * 1e3:>10.2f}ms{times['numba'] * 1e3:>10.2f}ms"
                  f"{times['numpy'] / times['numba']:>8.2f}x")
    finally:
        kernels._impl = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_forward(args.repeat)


if __name__ == "__main__":
    main()
