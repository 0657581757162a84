"""Token-to-Token encoder.

Three soft splits cascade the input into 16×16, 8×8 and 4×4 token grids (for
a 64×64 input with the default geometry).  The first two grids are
re-structurized by a transformer block each; the third gets a learned
position embedding and a small transformer stack.  RGB frames and encoded
flow go through the same weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import EncoderConfig
from .nn import LayerNorm, Linear, Mlp, Module, parameter, trunc_normal
from .tensor import Tensor


@dataclass
class TokenStage:
    tokens: Tensor  # (B, l, c)
    hw: tuple
    stage_index: int

    def __post_init__(self):
        h, w = self.hw
        if self.tokens.shape[-2] != h * w:
            raise ValueError(f"token count {self.tokens.shape[-2]} != {h}*{w}")

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]

    def spatial(self) -> Tensor:
        """``(B, h, w, c)`` view of the tokens."""
        b = self.tokens.shape[0]
        return self.tokens.reshape(b, self.hw[0], self.hw[1], self.channels)


class MultiHeadAttention(Module):
    """Scaled dot-product attention; queries and keys/values may differ."""

    def __init__(self, rng, dim: int, heads: int, std: float = 0.02):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, dim, dim, std=std)
        self.k = Linear(rng, dim, dim, std=std)
        self.v = Linear(rng, dim, dim, std=std)
        self.proj = Linear(rng, dim, dim, std=std)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def attend(self, query: Tensor, context: Tensor):
        """Return (output, attention weights) with weights shaped (B, heads, lq, lk)."""
        q, k, v = self._split(self.q(query)), self._split(self.k(context)), self._split(self.v(context))
        head_dim = q.shape[-1]
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(head_dim))
        weights = T.softmax(scores, axis=-1)
        out = weights @ v
        b, _, lq, _ = out.shape
        out = out.transpose(0, 2, 1, 3).reshape(b, lq, -1)
        return self.proj(out), weights

    def forward(self, query: Tensor, context: Tensor | None = None) -> Tensor:
        return self.attend(query, query if context is None else context)[0]


class TransformerBlock(Module):
    """Pre-norm block: ``x + MSA(LN(x))`` then ``+ MLP(LN(.))``."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: float = 2.0, std: float = 0.02):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads, std)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, max(1, int(dim * mlp_ratio)), dim)
        for lin in (self.mlp.fc1, self.mlp.fc2):
            lin.weight.data = trunc_normal(rng, lin.weight.shape, std)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def soft_split(x: Tensor, k: int, stride: int, padding: int, stage_index: int = 0) -> TokenStage:
    """Unfold overlapping k×k windows of a ``(B, h, w, c)`` map into tokens of length k·k·c."""
    cols = T.unfold(x, k, stride, padding)
    b, ho, wo, d = cols.shape
    return TokenStage(cols.reshape(b, ho * wo, d), (ho, wo), stage_index)


def restructurize(block: TransformerBlock, stage: TokenStage) -> TokenStage:
    return TokenStage(block(stage.tokens), stage.hw, stage.stage_index)


def stage_geometry(cfg: EncoderConfig, h: int, w: int) -> list:
    """Token grid (h, w) of each of the three stages."""
    dims = []
    for k, s, p in cfg.splits:
        h, w = T.conv_output_size(h, k, s, p), T.conv_output_size(w, k, s, p)
        dims.append((h, w))
    return dims


class T2TEncoder(Module):
    def __init__(self, rng, cfg: EncoderConfig, image_hw: tuple, in_channels: int = 3):
        cfg.validate()
        self.cfg = cfg
        self.image_hw = tuple(image_hw)
        self.geometry = stage_geometry(cfg, *image_hw)
        std = cfg.init_std
        widths = [in_channels, cfg.dims[0], cfg.dims[1]]
        self.proj = [Linear(rng, k * k * cin, d, std=std)
                     for (k, _, _), cin, d in zip(cfg.splits, widths, cfg.dims)]
        self.t2t = [TransformerBlock(rng, cfg.dims[i], cfg.t2t_heads, cfg.mlp_ratio, std) for i in range(2)]
        h3, w3 = self.geometry[2]
        self.pos_embed = parameter(trunc_normal(rng, (h3 * w3, cfg.dims[2]), std))
        self.blocks = [TransformerBlock(rng, cfg.dims[2], cfg.heads, cfg.mlp_ratio, std)
                       for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dims[2])

    def _split(self, x: Tensor, i: int) -> TokenStage:
        k, s, p = self.cfg.splits[i]
        st = soft_split(x, k, s, p, stage_index=i + 1)
        return TokenStage(self.proj[i](st.tokens), st.hw, i + 1)

    def forward(self, images) -> tuple:
        """``(B, H, W, C)`` images -> three TokenStages (16×16, 8×8, 4×4 by default)."""
        x = T.as_tensor(images)
        if tuple(x.shape[1:3]) != self.image_hw:
            raise ValueError(f"encoder built for {self.image_hw}, got input {x.shape[1:3]}")
        l1 = self._split(x, 0)
        t1 = restructurize(self.t2t[0], l1)
        l2 = self._split(t1.spatial(), 1)
        t2 = restructurize(self.t2t[1], l2)
        l3 = self._split(t2.spatial(), 2)
        z = l3.tokens + self.pos_embed
        for blk in self.blocks:
            z = blk(z)
        t3 = TokenStage(self.norm(z), l3.hw, 3)
        return t1, t2, t3

    encode = forward
