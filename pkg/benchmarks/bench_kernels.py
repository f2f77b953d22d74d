"""Compare the compiled and numpy kernel backends.

Times each kernel (forward and backward) on encoder-sized inputs, plus one
full training step of the compact fusion model, under both backends.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from dfast import kernels
from dfast import tensor as T
from dfast.rng import make_rng
from dfast.training import Adam, ModelConfig, StrokeModel, bce_loss


def kernel_cases(rng):
    # 2-D (rows, cols) views as the autodiff layer passes them
    x = rng.standard_normal((8 * 65, 192)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    gamma, beta = np.ones(192, np.float32), np.zeros(192, np.float32)
    scores = rng.standard_normal((8 * 6 * 65, 65)).astype(np.float32)
    p = kernels.softmax_fwd(scores)
    gs = rng.standard_normal(scores.shape).astype(np.float32)

    def ln_fwd():
        return kernels.layer_norm_fwd(x, gamma, beta, 1e-6)

    ln_out = ln_fwd()

    return {
        "layer_norm fwd": ln_fwd,
        "layer_norm bwd": lambda: kernels.layer_norm_bwd(g, *ln_out[1:], gamma),
        "gelu fwd": lambda: kernels.gelu_fwd(x),
        "gelu bwd": lambda: kernels.gelu_bwd(x, g),
        "softmax fwd": lambda: kernels.softmax_fwd(scores),
        "softmax bwd": lambda: kernels.softmax_bwd(p, gs),
    }


def training_step_case(rng):
    cfg = ModelConfig(face_preset="compact", voice_preset="compact", pose_preset="compact")
    model = StrokeModel(cfg, seed=0).train()
    opt = Adam(model.named_parameters(), 1e-4)
    batch = {"face": rng.standard_normal((8, 64, 256)).astype(np.float32),
             "voice": rng.standard_normal((8, 96, 256)).astype(np.float32),
             "pose": rng.standard_normal((8, 33, 192)).astype(np.float32)}
    labels = np.tile([0, 1], 4)
    drop = make_rng(1)

    def step():
        logits, _ = model(batch, drop)
        opt.zero_grad()
        T.backward(bce_loss(logits, labels))
        opt.step()

    return step


def best_ms(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        from dfast import _ckernels  # noqa: F401
    except ImportError:
        print("compiled extension not built; only the numpy backend is available")
        return
    results = {}
    for backend in ("python", "cython"):
        previous = kernels.use_backend(backend)
        try:
            rng = make_rng(0)
            for name, fn in kernel_cases(rng).items():
                results.setdefault(name, {})[backend] = best_ms(fn, args.repeat, 20)
            results.setdefault("training step (compact, batch 8)", {})[backend] = \
                best_ms(training_step_case(make_rng(0)), args.repeat, 2)
        finally:
            kernels.use_backend(previous)
    print(f"{'case':36s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, t in results.items():
        print(f"{name:36s} {t['python']:10.3f} {t['cython']:10.3f} {t['python'] / t['cython']:7.2f}x")


if __name__ == "__main__":
    main()
