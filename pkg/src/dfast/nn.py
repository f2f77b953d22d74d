"""Layer building blocks on top of :mod:`dfast.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import trunc_normal
from .tensor import Tensor


class Module:
    """Container of parameters and sub-modules.

    Parameters are the :class:`Tensor` attributes of a module; sub-modules are
    :class:`Module` attributes or lists of modules. Names follow attribute
    order, dotted (``blocks.0.attn.qkv.weight``).
    """

    training = False

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    yield from sub.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for sub in value:
                    yield from sub.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(array):
    return Tensor(array, requires_grad=True, dtype=array.dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, dtype=np.float32):
        self.weight = _param(trunc_normal(rng, (d_out, d_in), dtype=dtype))
        self.bias = _param(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        self.weight = _param(np.ones(dim, dtype=dtype))
        self.bias = _param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Linear → GELU → Linear."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype=np.float32):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, heads, rng, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"embed dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.keep_attention = False
        self.last_attention = None

    def forward(self, x):
        b, n, d = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(b, n, 3, h, d // h)
        qkv = qkv.transpose(2, 0, 3, 1, 4)  # (3, b, h, n, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        out, attn = T.scaled_dot_attention(q, k, v, return_weights=True)
        if self.keep_attention:
            self.last_attention = attn
        out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(LN(x)), then x + mlp(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio, rng, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng, dtype=dtype)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class MixerBlock(Module):
    """Token-mixing MLP across the token axis, then channel-mixing MLP."""

    def __init__(self, tokens, channels, token_hidden, channel_hidden, rng, dtype=np.float32):
        self.norm1 = LayerNorm(channels, dtype=dtype)
        self.token_mlp = MLP(tokens, token_hidden, tokens, rng, dtype=dtype)
        self.norm2 = LayerNorm(channels, dtype=dtype)
        self.channel_mlp = MLP(channels, channel_hidden, channels, rng, dtype=dtype)

    def forward(self, x):
        y = self.norm1(x).transpose(0, 2, 1)  # (b, channels, tokens)
        x = x + self.token_mlp(y).transpose(0, 2, 1)
        return x + self.channel_mlp(self.norm2(x))
