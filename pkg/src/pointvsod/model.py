"""The full network: shared T2T encoder, HTA fusion, LCFA and the edge decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import DecoderState, EdgeDecoder
from .encoder import T2TEncoder, TokenStage
from .fusion import HTA, LCFA
from .nn import Module
from .tensor import Tensor


@dataclass
class ModelOutput:
    state: DecoderState
    maps: dict  # s1..s4, s_final as (B, H, W) at input resolution
    stages: dict


class PointVSOD(Module):
    def __init__(self, cfg: RunConfig, image_hw: tuple):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.image_hw = tuple(image_hw)
        self.encoder = T2TEncoder(rng, cfg.encoder, image_hw)
        (h1, w1), (h2, w2), (h3, w3) = self.encoder.geometry
        d1, d2, d3 = cfg.encoder.dims
        f = cfg.fusion
        self.hta_rgb1 = HTA(rng, h1 * w1, d1, False, f)
        self.hta_flow1 = HTA(rng, h1 * w1, d1, False, f)
        self.hta2 = HTA(rng, h2 * w2, d2, True, f)
        self.hta3 = HTA(rng, h3 * w3, d3, True, f)
        self.lcfa = LCFA(rng, 2 * d3, f)
        self.decoder = EdgeDecoder(rng, [d1, d1, 2 * d2, 2 * d3], cfg.decoder.channels)

    def lcfa_parameter_names(self) -> set:
        return {n for n, _ in self.named_parameters() if n.startswith("lcfa.")}

    def astype(self, dtype) -> "PointVSOD":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def forward(self, frames, flow_images, clip_len: int, use_lcfa: bool = True) -> ModelOutput:
        """Run ``B = clips * clip_len`` frames; consecutive groups of ``clip_len`` form a clip.

        ``frames`` and ``flow_images`` are (B, H, W, 3) arrays in [0, 1].
        """
        frames = T.as_tensor(frames)
        flow_images = T.as_tensor(flow_images)
        b = frames.shape[0]
        if flow_images.shape != frames.shape:
            raise ValueError(f"frames {frames.shape} and flow {flow_images.shape} differ")
        if b % clip_len:
            raise ValueError(f"batch of {b} frames is not a multiple of clip length {clip_len}")
        r1, r2, r3 = self.encoder(T.concat([frames, flow_images], axis=0))
        split = lambda st: (TokenStage(st.tokens[:b], st.hw, st.stage_index),
                            TokenStage(st.tokens[b:], st.hw, st.stage_index))
        (t1r, t1o), (t2r, t2o), (t3r, t3o) = split(r1), split(r2), split(r3)

        t0a = self.hta_rgb1(t1r)
        t1a = self.hta_flow1(t1o)
        t2a = self.hta2(t2r, t2o)
        t3a = self.hta3(t3r, t3o)
        tl = self._long_term(t3a, clip_len) if use_lcfa and self.cfg.fusion.use_lcfa else t3a

        state = self.decoder([t0a, t1a, t2a, tl])
        hw = self.image_hw
        maps = {}
        for i, s in enumerate(state.side, 1):
            maps[f"s{i}"] = T.bilinear_interp(s, hw).reshape(b, *hw)
        maps["s_final"] = T.bilinear_interp(state.s_final, hw).reshape(b, *hw)
        stages = {"t0a": t0a, "t1a": t1a, "t2a": t2a, "t3a": t3a, "tl": tl}
        return ModelOutput(state, maps, stages)

    def _long_term(self, t3a: TokenStage, clip_len: int) -> TokenStage:
        if clip_len < 2:
            return t3a
        tokens = t3a.tokens
        groups = [self.lcfa(tokens[s:s + clip_len]) for s in range(0, tokens.shape[0], clip_len)]
        out = groups[0] if len(groups) == 1 else T.concat(groups, axis=0)
        return TokenStage(out, t3a.hw, t3a.stage_index)
