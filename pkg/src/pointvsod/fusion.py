"""Short-term RGB/flow fusion (hybrid token attention) and long-term cross-frame attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .config import FusionConfig
from .encoder import MultiHeadAttention, TokenStage
from .nn import LayerNorm, Linear, Mlp, Module
from .tensor import Tensor


@dataclass
class FusedTokens:
    t_fused: Tensor     # ROFA output
    rofa_gate: Tensor   # channel gate, same shape as LN(T)
    ta_gate: Tensor     # (B, l) token gate
    t_attended: Tensor  # TA output
    ln_t: Tensor        # LN(T), kept for the residual identities
    ln_tf: Tensor       # LN(T^f)


class ROFA(Module):
    """Channel gate over concatenated RGB/flow tokens."""

    def __init__(self, rng, channels: int, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.norm = LayerNorm(channels)
        self.fc1 = Linear(rng, channels, hidden)
        self.fc2 = Linear(rng, hidden, channels)

    def forward(self, t_rgb: Tensor, t_flow: Optional[Tensor] = None):
        if t_flow is None:
            t = t_rgb
        else:
            if t_rgb.shape != t_flow.shape:
                raise ValueError(f"rofa: rgb tokens {t_rgb.shape} vs flow tokens {t_flow.shape}")
            t = T.concat([t_rgb, t_flow], axis=-1)
        ln_t = self.norm(t)
        y1 = T.gelu(self.fc1(ln_t))
        y2 = T.sigmoid(self.fc2(y1))
        return ln_t + y2 * ln_t, y2, ln_t


class TokenAttention(Module):
    """Squeeze-excitation over the token axis; token count is fixed per stage."""

    def __init__(self, rng, num_tokens: int, channels: int, reduction: int = 4):
        hidden = max(1, num_tokens // reduction)
        self.norm = LayerNorm(channels)
        self.fc1 = Linear(rng, num_tokens, hidden)
        self.fc2 = Linear(rng, hidden, num_tokens)

    def forward(self, t_f: Tensor):
        z1 = T.avg_pool_tokens(t_f)                      # (B, l)
        z2 = T.sigmoid(self.fc2(T.gelu(self.fc1(z1))))   # (B, l)
        ln = self.norm(t_f)
        gate = z2.reshape(z2.shape + (1,))
        return gate * ln + ln, z2, ln


class HTA(Module):
    """ROFA followed by TA.  ``paired`` concatenates RGB and flow tokens first."""

    def __init__(self, rng, num_tokens: int, channels: int, paired: bool, cfg: FusionConfig):
        self.paired = paired
        width = 2 * channels if paired else channels
        self.rofa = ROFA(rng, width, cfg.rofa_reduction)
        self.ta = TokenAttention(rng, num_tokens, width, cfg.ta_reduction)

    def fuse(self, t_rgb: Tensor, t_flow: Optional[Tensor] = None) -> FusedTokens:
        if self.paired != (t_flow is not None):
            mode = "paired" if self.paired else "single"
            raise ValueError(f"hta: {mode} module called with wrong number of inputs")
        t_f, y2, ln_t = self.rofa(t_rgb, t_flow)
        t_a, z2, ln_tf = self.ta(t_f)
        return FusedTokens(t_f, y2, z2, t_a, ln_t, ln_tf)

    def forward(self, a: TokenStage, b: Optional[TokenStage] = None) -> TokenStage:
        fused = self.fuse(a.tokens, None if b is None else b.tokens)
        return TokenStage(fused.t_attended, a.hw, a.stage_index)


class LCFABlock(Module):
    """One round of cross-frame attention: each frame queries all other frames."""

    def __init__(self, rng, dim: int, cfg: FusionConfig):
        self.attn = MultiHeadAttention(rng, dim, cfg.lcfa_heads)
        self.mlp = Mlp(rng, dim, max(1, int(dim * cfg.lcfa_mlp_ratio)), dim)
        self.norm = LayerNorm(dim)
        self.residual = cfg.lcfa_mlp_residual

    @staticmethod
    def other_frame_index(n: int, l: int) -> np.ndarray:
        """Row indices into the flattened (n·l) token table for every frame's context."""
        rows = np.arange(n * l).reshape(n, l)
        return np.stack([np.concatenate([rows[o] for o in range(n) if o != c]) for c in range(n)])

    def attend(self, phi: Tensor):
        """``phi`` is (n, l, d); returns (phi', weights (n, heads, l, (n-1)l))."""
        n, l, d = phi.shape
        if n < 2:
            raise ValueError("cross-frame attention needs at least two frames")
        table = phi.reshape(n * l, d)
        context = T.getitem(table, self.other_frame_index(n, l))   # (n, (n-1)l, d)
        out, weights = self.attn.attend(phi, context)
        return phi + out, weights

    def forward(self, phi: Tensor) -> Tensor:
        phi1, _ = self.attend(phi)
        h = self.mlp(phi1)
        if self.residual:
            h = h + phi1
        return self.norm(h)


class LCFA(Module):
    def __init__(self, rng, dim: int, cfg: FusionConfig):
        count = 1 if cfg.lcfa_shared_weights else cfg.lcfa_iterations
        self.blocks = [LCFABlock(rng, dim, cfg) for _ in range(count)]
        self.iterations = cfg.lcfa_iterations

    def forward(self, phi: Tensor) -> Tensor:
        """``phi`` is the (n, l, d) stack of one clip's stage-3 tokens."""
        if phi.ndim != 3:
            raise ValueError(f"lcfa expects (frames, tokens, dim), got {phi.shape}")
        if phi.shape[0] == 1:
            return phi
        for i in range(self.iterations):
            phi = self.blocks[min(i, len(self.blocks) - 1)](phi)
        return phi
