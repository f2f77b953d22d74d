"""Modality encoders: patch transformer for 2-D grids, MLP-Mixer for pose."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import LayerNorm, Linear, MixerBlock, Module, TransformerBlock
from .rng import trunc_normal
from .tensor import Tensor

EMBED_DIM = 256


@dataclass(frozen=True)
class PatchTransformerConfig:
    embed_dim: int
    depth: int
    heads: int
    height: int
    width: int
    patch_size: int = 16
    mlp_ratio: int = 4
    use_pos_embed: bool = True

    def __post_init__(self):
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ContractError(
                f"grid {self.height}x{self.width} is not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.heads:
            raise ContractError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")

    @property
    def num_patches(self):
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MixerConfig:
    tokens: int = 33
    in_channels: int = 64 * 3
    channel_dim: int = 128
    token_hidden: int = 64
    channel_hidden: int = 256
    depth: int = 4

    def __post_init__(self):
        if self.tokens != 33:
            raise ContractError(f"pose mixer expects 33 joint tokens, got {self.tokens}")

    def to_dict(self):
        return asdict(self)


# Encoder size presets. "tiny" and "base" are the desk-scale stand-ins for the
# AST tiny/base backbones; "compact" is the reduced scale used by the
# single-core benchmark.
TRANSFORMER_PRESETS = {
    "tiny": dict(embed_dim=96, depth=4, heads=3),
    "base": dict(embed_dim=192, depth=6, heads=6),
    "compact": dict(embed_dim=64, depth=2, heads=2),
}
MIXER_PRESETS = {
    "default": dict(channel_dim=128, token_hidden=64, channel_hidden=256, depth=4),
    "compact": dict(channel_dim=64, token_hidden=32, channel_hidden=128, depth=2),
}

FACE_GRID = (128, 128)
VOICE_GRID = (96, 256)
POSE_FRAMES = 64


def transformer_config(preset, grid, use_pos_embed=True):
    try:
        dims = TRANSFORMER_PRESETS[preset]
    except KeyError:
        raise ContractError(f"unknown transformer preset {preset!r}") from None
    return PatchTransformerConfig(height=grid[0], width=grid[1], use_pos_embed=use_pos_embed, **dims)


def mixer_config(preset):
    try:
        dims = MIXER_PRESETS[preset]
    except KeyError:
        raise ContractError(f"unknown mixer preset {preset!r}") from None
    return MixerConfig(in_channels=POSE_FRAMES * 3, **dims)


def patchify(grid, patch=16):
    """Split ``(..., H, W)`` into ``(..., H/p * W/p, p*p)`` row-major patches."""
    grid = np.asarray(grid)
    *lead, h, w = grid.shape
    if h % patch or w % patch:
        raise ContractError(f"grid {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = grid.reshape(*lead, gh, patch, gw, patch)
    nl = len(lead)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3)
    return np.ascontiguousarray(x).reshape(*lead, gh * gw, patch * patch)


def pose_tokens(pose):
    """(..., T, 33, 3) pose → (..., 33, T*3) joint tokens, frame-major per joint."""
    pose = np.asarray(pose)
    *lead, t, p, c = pose.shape
    if p != 33 or c != 3:
        raise DimensionError(f"pose tokens need (T, 33, 3) frames, got {pose.shape}")
    nl = len(lead)
    x = pose.transpose(*range(nl), nl + 1, nl, nl + 2)
    return np.ascontiguousarray(x).reshape(*lead, p, t * c)


class PatchTransformer(Module):
    """Linear patch embedding, class token, learned positions, pre-norm blocks."""

    def __init__(self, cfg: PatchTransformerConfig, rng, dtype=np.float32):
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_size * cfg.patch_size, d, rng, dtype=dtype)
        self.cls_token = Tensor(trunc_normal(rng, (1, 1, d), dtype=dtype), requires_grad=True)
        if cfg.use_pos_embed:
            self.pos_embed = Tensor(np.zeros((1, cfg.num_patches + 1, d), dtype=dtype), requires_grad=True)
        self.blocks = [TransformerBlock(d, cfg.heads, cfg.mlp_ratio, rng, dtype=dtype) for _ in range(cfg.depth)]
        self.norm = LayerNorm(d, dtype=dtype)

    def forward(self, patches):
        """``patches``: (B, N, p*p) array or tensor → (B, embed_dim)."""
        if not isinstance(patches, Tensor):
            patches = Tensor(patches, dtype=self.patch_embed.weight.dtype)
        if patches.ndim != 3 or patches.shape[1] < 1:
            raise DimensionError(f"expected (batch, tokens, patch) input, got {patches.shape}")
        b = patches.shape[0]
        x = self.patch_embed(patches)
        cls = self.cls_token + np.zeros((b, 1, 1), dtype=x.dtype)
        x = T.concat([cls, x], axis=1)
        if self.cfg.use_pos_embed:
            if x.shape[1] != self.pos_embed.shape[1]:
                raise DimensionError(
                    f"{x.shape[1] - 1} tokens given, positional table holds {self.pos_embed.shape[1] - 1}"
                )
            x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 0]

    def attention_maps(self):
        return [blk.attn.last_attention for blk in self.blocks]

    def keep_attention(self, flag=True):
        for blk in self.blocks:
            blk.attn.keep_attention = flag
            if not flag:
                blk.attn.last_attention = None


class PoseMixer(Module):
    """MLP-Mixer over 33 joint tokens; channels are the flattened trajectory."""

    def __init__(self, cfg: MixerConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.embed = Linear(cfg.in_channels, cfg.channel_dim, rng, dtype=dtype)
        self.blocks = [
            MixerBlock(cfg.tokens, cfg.channel_dim, cfg.token_hidden, cfg.channel_hidden, rng, dtype=dtype)
            for _ in range(cfg.depth)
        ]
        self.norm = LayerNorm(cfg.channel_dim, dtype=dtype)

    def forward(self, tokens):
        """``tokens``: (B, 33, in_channels) → (B, channel_dim)."""
        if not isinstance(tokens, Tensor):
            tokens = Tensor(tokens, dtype=self.embed.weight.dtype)
        if tokens.ndim != 3 or tokens.shape[1:] != (self.cfg.tokens, self.cfg.in_channels):
            raise DimensionError(
                f"expected (batch, {self.cfg.tokens}, {self.cfg.in_channels}) input, got {tokens.shape}"
            )
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(axis=1)


class Projector(Module):
    """Linear map into the shared 256-d space followed by GELU."""

    def __init__(self, d_in, rng, d_out=EMBED_DIM, dtype=np.float32):
        self.fc = Linear(d_in, d_out, rng, dtype=dtype)

    def forward(self, x):
        return T.gelu(self.fc(x))


def encoder_out_dim(encoder):
    if isinstance(encoder, PatchTransformer):
        return encoder.cfg.embed_dim
    return encoder.cfg.channel_dim
