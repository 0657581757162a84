"""Edge-complementary CNN decoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import tensor as T
from .encoder import TokenStage
from .nn import Conv2d, Linear, Module
from .tensor import Tensor


@dataclass
class DecoderState:
    c: list        # C1..C4, (B, h_i, w_i, channels)
    ff: list       # FF1..FF4
    side: list     # S1..S4, (B, h_i, w_i, 1) in [0, 1]
    edge: Tensor   # E = FF1 ⊙ S2
    s_final: Tensor  # (B, h_1, w_1, 1) in [0, 1]


class ConvStack(Module):
    """``n`` 3×3 conv + GeLU layers."""

    def __init__(self, rng, c_in: int, c_out: int, n: int):
        self.convs = [Conv2d(rng, c_in if i == 0 else c_out, c_out, 3) for i in range(n)]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = T.gelu(conv(x))
        return x


class SideHead(Module):
    """1×1 conv to a single channel, then sigmoid."""

    def __init__(self, rng, c_in: int):
        self.conv = Conv2d(rng, c_in, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.conv(x))


def srg_edge(ff1: Tensor, s2: Tensor) -> Tensor:
    """Gate edge features by the predicted salient region: ``E = FF1 ⊙ S2``."""
    if tuple(s2.shape[1:3]) != tuple(ff1.shape[1:3]):
        s2 = T.bilinear_interp(s2, ff1.shape[1:3])
    return ff1 * s2


class EdgeDecoder(Module):
    def __init__(self, rng, in_channels: list, channels: int = 64):
        self.compress_layers = [Linear(rng, c, channels, std=(2.0 / c) ** 0.5) for c in in_channels]
        self.ff = [ConvStack(rng, channels, channels, 3) for _ in range(4)]
        # f_1 refines interp(FF4); f_2 and f_3 refine interp(FF_{i+1})
        self.f = [ConvStack(rng, channels, channels, 2) for _ in range(3)]
        self.heads = [SideHead(rng, channels) for _ in range(4)]
        self.final1 = Conv2d(rng, 4 * channels, channels, 3)
        self.final2 = Conv2d(rng, channels, 1, 3)

    def compress(self, stages: list) -> list:
        """Four token stages -> four ``channels``-wide spatial maps (1×1 convs)."""
        if len(stages) != 4:
            raise ValueError(f"decoder needs four inputs, got {len(stages)}")
        out = []
        for stage, layer in zip(stages, self.compress_layers):
            c = layer(stage.tokens)
            b = c.shape[0]
            out.append(c.reshape(b, stage.hw[0], stage.hw[1], c.shape[-1]))
        return out

    def fuse_cascade(self, c: list):
        ff4 = self.ff[3](c[3])
        ff3 = self.ff[2](c[2] + self.f[2](T.bilinear_interp(ff4, c[2].shape[1:3])))
        ff2 = self.ff[1](c[1] + self.f[1](T.bilinear_interp(ff3, c[1].shape[1:3])))
        ff1 = self.ff[0](c[0] + self.f[0](T.bilinear_interp(ff4, c[0].shape[1:3])))
        ff = [ff1, ff2, ff3, ff4]
        side = [head(x) for head, x in zip(self.heads, ff)]
        return ff, side

    def final_head(self, edge: Tensor, ff2: Tensor, ff3: Tensor, ff4: Tensor) -> Tensor:
        hw = edge.shape[1:3]
        merged = T.concat([edge] + [T.bilinear_interp(x, hw) for x in (ff2, ff3, ff4)], axis=-1)
        return T.sigmoid(self.final2(T.gelu(self.final1(merged))))

    def forward(self, stages: list, s2_override: Optional[Tensor] = None) -> DecoderState:
        c = self.compress(stages)
        ff, side = self.fuse_cascade(c)
        s2 = side[1] if s2_override is None else s2_override
        edge = srg_edge(ff[0], s2)
        s_final = self.final_head(edge, ff[1], ff[2], ff[3])
        return DecoderState(c, ff, side, edge, s_final)
