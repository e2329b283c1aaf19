#!/usr/bin/env python3
"""Compare the compiled kernels against the numpy fallback.

Times each kernel on training-realistic shapes (batch 32, the default
layer widths) plus a composite full training step, for both backends.

    python benchmarks/bench_kernels.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from aegm._kernels import pure

try:
    from aegm._kernels import _speedups
except ImportError:
    _speedups = None


def bench(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6  # us


def kernel_cases(dtype):
    rng = np.random.default_rng(0)
    n, d = 32, 128
    x = rng.normal(size=(n, d)).astype(dtype)
    dy = rng.normal(size=(n, d)).astype(dtype)
    gamma = np.ones(d, dtype=dtype)
    beta = np.zeros(d, dtype=dtype)
    _y, xhat, _m, _v, invstd = pure.bn_forward_train(x, gamma, beta, 1e-5)
    p = rng.normal(size=640 * 128).astype(dtype)
    g = rng.normal(size=640 * 128).astype(dtype)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    def adam(mod):
        return lambda: mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 10)

    return [
        ("relu_forward 32x128", lambda mod: lambda: mod.relu_forward(x)),
        ("relu_backward 32x128", lambda mod: lambda: mod.relu_backward(dy, x)),
        ("bn_forward 32x128", lambda mod: lambda: mod.bn_forward_train(x, gamma, beta, 1e-5)),
        ("bn_backward 32x128", lambda mod: lambda: mod.bn_backward_train(dy, xhat, gamma, invstd)),
        ("adam_update 82k", adam),
    ]


def training_step_case(backend_env):
    """One full compute_losses + Adam step at production shapes, timed in a
    subprocess so the backend choice applies at import."""
    import subprocess
    import sys

    code = """
import numpy as np, time
from aegm.model import AegmConfig, AegmModel, GroupedBatch
from aegm import nn
model = AegmModel(AegmConfig(input_dim=640), seed=0, dtype=np.float32)
rng = np.random.default_rng(0)
rows = rng.normal(size=(32, 640)).astype(np.float32)
batch = GroupedBatch(rows=rows, section_ids=np.tile(np.arange(3), 11)[:32])
opt = nn.AdamState(lr=1e-3)
params = model.parameters()
for _ in range(10):
    _bd, grads = model.compute_losses(batch)
    opt.step(params, grads)
t0 = time.perf_counter()
for _ in range(200):
    _bd, grads = model.compute_losses(batch)
    opt.step(params, grads)
print((time.perf_counter() - t0) / 200 * 1e3)
"""
    import os

    env = dict(os.environ)
    env.update(backend_env)
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    if _speedups is None:
        print("compiled kernels not built; only the pure backend is available")

    for dtype in (np.float32, np.float64):
        print(f"\nper-kernel ({np.dtype(dtype).name}, microseconds per call)")
        print(f"  {'kernel':<22} {'pure':>9} {'cython':>9} {'speedup':>8}")
        for name, make in kernel_cases(dtype):
            t_pure = bench(make(pure), args.repeats)
            if _speedups is not None:
                t_cy = bench(make(_speedups), args.repeats)
                print(f"  {name:<22} {t_pure:>9.1f} {t_cy:>9.1f} {t_pure / t_cy:>7.1f}x")
            else:
                print(f"  {name:<22} {t_pure:>9.1f} {'-':>9} {'-':>8}")

    print("\nfull training step (batch 32, default model, ms per step)")
    t_pure = training_step_case({"AEGM_PURE_PYTHON": "1"})
    print(f"  pure backend:   {t_pure:.2f} ms")
    if _speedups is not None:
        t_cy = training_step_case({"AEGM_PURE_PYTHON": ""})
        print(f"  cython backend: {t_cy:.2f} ms  ({t_pure / t_cy:.2f}x)")


if __name__ == "__main__":
    main()
