#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy reference.

Times each hot kernel at training-shaped sizes, then one full model
loss-and-gradients step per backend. Compiled warmup happens outside the
timed region. Usage: python3 benchmarks/bench_kernels.py [--reps N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from schemadst import kernels
from schemadst.kernels import reference

try:
    from schemadst.kernels import jit
except ImportError:
    jit = None


def _time(fn, args, reps):
    fn(*args)  # warmup (includes any compile)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _kernel_cases(rng, dtype=np.float32):
    b, h, t, d, dff = 32, 4, 128, 64, 256
    n = b * t
    x = rng.standard_normal((n, d)).astype(dtype)
    dy = rng.standard_normal((n, d)).astype(dtype)
    gamma = np.ones(d, dtype=dtype)
    beta = np.zeros(d, dtype=dtype)
    _, mean, rstd = reference.layer_norm_forward(x, gamma, beta, 1e-12)
    xff = rng.standard_normal((n, dff)).astype(dtype)
    dff_arr = rng.standard_normal((n, dff)).astype(dtype)
    scores = rng.standard_normal((b, h, t, t)).astype(dtype)
    valid = rng.integers(40, t + 1, size=b).astype(np.int64)
    probs = reference.attention_softmax(scores, valid)
    dprobs = rng.standard_normal((b, h, t, t)).astype(dtype)
    logits = rng.standard_normal((n, t)).astype(dtype)
    labels = rng.integers(0, t, size=n).astype(np.int64)
    param = rng.standard_normal(n * d).astype(dtype)
    grad = rng.standard_normal(n * d).astype(dtype)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    return [
        ("layer_norm_forward", "layer_norm_forward", (x, gamma, beta, 1e-12)),
        ("layer_norm_backward", "layer_norm_backward", (dy, x, gamma, mean, rstd)),
        ("gelu_forward", "gelu_forward", (xff,)),
        ("gelu_backward", "gelu_backward", (dff_arr, xff)),
        ("attention_softmax", "attention_softmax", (scores, valid)),
        ("attention_softmax_backward", "attention_softmax_backward", (dprobs, probs)),
        ("softmax_xent", "softmax_xent", (logits, labels)),
        ("adam_step", "adam_step", (param, grad, m, v, 1e-4, 0.9, 0.999, 1e-8, 10)),
    ]


def _model_step(backend: str, reps: int) -> float:
    kernels.set_backend(backend)
    from schemadst.examples import TaskKind
    from schemadst.model import ModelConfig, NluModel

    rng = np.random.default_rng(0)
    config = ModelConfig(vocab_size=600, max_seq_len=128, seed=0)
    model = NluModel(config)
    b, t = 32, 96
    batch = {
        "token_ids": rng.integers(4, 600, size=(b, t)),
        "segment_ids": (np.arange(t)[None, :] > 12).astype(np.int64) * np.ones((b, 1), np.int64),
        "valid_lens": rng.integers(40, t + 1, size=b),
        "tasks": rng.integers(0, 5, size=b),
        "labels": rng.integers(0, 2, size=b),
        "span_starts": rng.integers(0, 40, size=b),
        "span_ends": rng.integers(0, 40, size=b),
    }
    batch["labels"][batch["tasks"] == int(TaskKind.STATUS)] %= 3
    drop_rng = np.random.default_rng(1)
    return _time(
        lambda: model.loss_and_grads(batch, train=True, rng=drop_rng)[0], (), reps
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(42)
    cases = _kernel_cases(rng)
    name_w = max(len(n) for n, _, _ in cases) + 2
    print(f"{'kernel':<{name_w}}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, attr, kargs in cases:
        t_np = _time(getattr(reference, attr), kargs, args.reps) * 1e3
        if jit is None:
            print(f"{name:<{name_w}}{t_np:>10.3f}{'n/a':>10}{'-':>9}")
            continue
        t_nb = _time(getattr(jit, attr), kargs, args.reps) * 1e3
        print(f"{name:<{name_w}}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")

    print()
    t_np = _model_step("numpy", max(3, args.reps // 4)) * 1e3
    row = f"{'model loss+grads step':<{name_w}}{t_np:>10.3f}"
    if jit is not None:
        t_nb = _model_step("numba", max(3, args.reps // 4)) * 1e3
        row += f"{t_nb:>10.3f}{t_np / t_nb:>8.1f}x"
    else:
        row += f"{'n/a':>10}{'-':>9}"
    print(row)
    kernels.set_backend("auto")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
