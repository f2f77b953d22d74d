"""Fusion of the per-modality 256-d embeddings.

Modalities always appear in the fixed order face, voice, pose. Absent
modalities are dropped before fusing, so softmax weights are spread over the
present ones only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import EMBED_DIM
from .errors import ContractError, DimensionError
from .nn import Module
from .rng import trunc_normal
from .tensor import Tensor

MODALITIES = ("face", "voice", "pose")
STRATEGIES = ("concat", "sum", "wsum", "attention")


@dataclass
class FusionInput:
    """Embeddings keyed by modality; a missing key (or ``None``) means absent."""

    embeddings: dict = field(default_factory=dict)

    @property
    def present(self):
        return tuple(m for m in MODALITIES if self.embeddings.get(m) is not None)

    def validate(self):
        present = self.present
        if not present:
            raise ContractError("fusion needs at least one modality")
        for m in present:
            e = self.embeddings[m]
            if e.shape[-1] != EMBED_DIM:
                raise DimensionError(f"{m} embedding has width {e.shape[-1]}, expected {EMBED_DIM}")
        return present

    def tensors(self):
        return [self.embeddings[m] for m in self.validate()]


@dataclass
class FusionOutput:
    fused: Tensor
    weights: np.ndarray | None = None  # (batch, present) or (present,)
    modalities: tuple = ()


def _stack(inp):
    mods = inp.validate()
    return mods, T.stack(inp.tensors(), axis=-2)  # (..., M, 256)


def concat_fuse(inp: FusionInput) -> FusionOutput:
    mods = inp.validate()
    return FusionOutput(T.concat(inp.tensors(), axis=-1), None, mods)


def sum_fuse(inp: FusionInput) -> FusionOutput:
    mods = inp.validate()
    tensors = inp.tensors()
    out = tensors[0]
    for t in tensors[1:]:
        out = out + t
    return FusionOutput(out, None, mods)


def weighted_sum_fuse(inp: FusionInput, logits: Tensor) -> FusionOutput:
    """Softmax over the present modalities' logits, then a weighted sum."""
    mods, stacked = _stack(inp)
    if logits.shape != (len(MODALITIES),):
        raise DimensionError(f"expected {len(MODALITIES)} fusion logits, got {logits.shape}")
    idx = [MODALITIES.index(m) for m in mods]
    w = T.softmax(logits[idx])  # (M,)
    fused = (stacked * w.reshape(len(mods), 1)).sum(axis=-2)
    return FusionOutput(fused, w.data.copy(), mods)


def attention_fuse(inp: FusionInput, query: Tensor, w_key: Tensor, w_value: Tensor) -> FusionOutput:
    """Single learned query attending over the modality tokens.

    k_i = Wk e_i, v_i = Wv e_i, a = softmax(q·k_i / √256), fused = Σ a_i v_i.
    Weights are per sample.
    """
    mods, stacked = _stack(inp)  # (B, M, 256)
    keys = T.linear(stacked, w_key)
    values = T.linear(stacked, w_value)
    scale = 1.0 / math.sqrt(EMBED_DIM)
    scores = T.linear(keys, query.reshape(1, EMBED_DIM)) * scale  # (B, M, 1)
    ndim = scores.ndim
    attn = T.softmax(scores.transpose(*range(ndim - 2), ndim - 1, ndim - 2))  # (B, 1, M)
    fused = T.matmul(attn, values)  # (B, 1, 256)
    fused = fused.reshape(*fused.shape[:-2], EMBED_DIM)
    weights = attn.data.reshape(*attn.shape[:-2], len(mods)).copy()
    return FusionOutput(fused, weights, mods)


class Fusion(Module):
    """Learnable wrapper dispatching to one of the four strategies."""

    def __init__(self, strategy, rng, dtype=np.float32):
        if strategy not in STRATEGIES:
            raise ContractError(f"unknown fusion strategy {strategy!r}; choose from {STRATEGIES}")
        self.strategy = strategy
        if strategy == "wsum":
            self.logits = Tensor(np.zeros(len(MODALITIES), dtype=dtype), requires_grad=True)
        elif strategy == "attention":
            self.query = Tensor(trunc_normal(rng, (EMBED_DIM,), dtype=dtype), requires_grad=True)
            self.w_key = Tensor(trunc_normal(rng, (EMBED_DIM, EMBED_DIM), dtype=dtype), requires_grad=True)
            self.w_value = Tensor(trunc_normal(rng, (EMBED_DIM, EMBED_DIM), dtype=dtype), requires_grad=True)

    def output_dim(self, n_modalities):
        return EMBED_DIM * n_modalities if self.strategy == "concat" else EMBED_DIM

    def forward(self, inp: FusionInput) -> FusionOutput:
        if self.strategy == "concat":
            return concat_fuse(inp)
        if self.strategy == "sum":
            return sum_fuse(inp)
        if self.strategy == "wsum":
            return weighted_sum_fuse(inp, self.logits)
        return attention_fuse(inp, self.query, self.w_key, self.w_value)
