"""Seedable counter-based random streams.

All randomness in the package flows through explicit ``numpy.random.Generator``
objects backed by Philox, created here from integer seeds and optional keys.
"""
import numpy as np


def make_rng(seed, *keys):
    """Generator for ``seed``; extra integer ``keys`` select independent streams."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) truncated to ±2 std by resampling."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(dtype)
