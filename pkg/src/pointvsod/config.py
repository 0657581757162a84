"""Run configuration.

On disk the config is a flat text document, one ``section.key = value`` per
line, values written as JSON literals.  ``#`` starts a comment line.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class EncoderConfig:
    # (kernel, stride, padding) of the three soft splits
    splits: list = field(default_factory=lambda: [[7, 4, 2], [3, 2, 1], [3, 2, 1]])
    dims: list = field(default_factory=lambda: [64, 64, 64])
    depth: int = 2
    heads: int = 4
    t2t_heads: int = 1
    mlp_ratio: float = 2.0
    init_std: float = 0.02

    def validate(self) -> None:
        if len(self.splits) != 3 or len(self.dims) != 3:
            raise ValueError("encoder needs exactly three soft splits and three stage dims")
        if self.depth < 1:
            raise ValueError("encoder.depth must be >= 1")
        for k, s, p in self.splits:
            if k < 1 or s < 1 or p < 0:
                raise ValueError(f"bad soft split {(k, s, p)}")
        if self.dims[2] % self.heads:
            raise ValueError("encoder.dims[2] must be divisible by encoder.heads")


@dataclass
class FusionConfig:
    rofa_reduction: int = 4
    ta_reduction: int = 4
    lcfa_heads: int = 4
    lcfa_iterations: int = 3
    lcfa_shared_weights: bool = False
    lcfa_mlp_residual: bool = False
    lcfa_mlp_ratio: float = 2.0
    use_lcfa: bool = True


@dataclass
class DecoderConfig:
    channels: int = 64


@dataclass
class LossConfig:
    w_edge_bce: float = 1.0 / 5.0
    w_side_pbce: float = 1.0 / 3.0
    w_side_smooth: float = 1.0 / 3.0
    w_final_pbce: float = 1.0
    w_final_smooth: float = 0.3
    w_final_gcrf: float = 0.1
    gcrf_kernel: int = 5
    gcrf_sigma_pt: float = 3.0
    gcrf_sigma_i: float = 0.1
    clamp_eps: float = 1e-7
    edge_quantile: float = 0.9


@dataclass
class FloodFillConfig:
    gamma: float = 6.0
    threshold: float = 0.1


@dataclass
class OptimConfig:
    name: str = "momentum"
    lr: float = 1e-3
    momentum: float = 0.9
    poly_power: float = 0.9
    grad_clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # applied to non-LCFA parameters during the clip phase when a still phase ran
    finetune_ratio: float = 0.1


@dataclass
class TrainConfig:
    steps: int = 300
    still_steps: int = 0
    clip_len: int = 4
    clips_per_batch: int = 2
    checkpoint_every: int = 0
    hflip: bool = False
    random_crop: float = 0.0
    dtype: str = "float32"


@dataclass
class DataConfig:
    size: int = 64
    num_clips: int = 8
    frames_per_clip: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    floodfill: FloodFillConfig = field(default_factory=FloodFillConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        for f in dataclasses.fields(self.loss):
            if f.name.startswith("w_") and getattr(self.loss, f.name) < 0:
                raise ValueError(f"loss.{f.name} must be >= 0")
        if self.train.clip_len < 1:
            raise ValueError("train.clip_len must be >= 1")
        if self.floodfill.gamma < 1:
            raise ValueError("floodfill.gamma must be >= 1")
        if self.loss.gcrf_kernel % 2 == 0:
            raise ValueError("loss.gcrf_kernel must be odd")
        if self.optim.name not in ("momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optim.name!r}")
        if self.optim.lr <= 0:
            raise ValueError("optim.lr must be > 0")
        if self.train.dtype not in ("float32", "float64"):
            raise ValueError(f"train.dtype must be float32 or float64, got {self.train.dtype!r}")
        if self.train.steps < 0 or self.train.still_steps < 0 or self.train.clips_per_batch < 1:
            raise ValueError("train.steps/still_steps must be >= 0 and clips_per_batch >= 1")
        return self

    # -- serialization ------------------------------------------------------
    def to_flat(self) -> dict:
        flat = {"seed": self.seed}
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub):
                for g in dataclasses.fields(sub):
                    flat[f"{f.name}.{g.name}"] = getattr(sub, g.name)
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        for key, value in flat.items():
            cfg.set(key, value)
        return cfg.validate()

    def dumps(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                parsed = json.loads(value)
            except json.JSONDecodeError as exc:
                raise ValueError(f"config line {lineno}: bad value {value!r}") from exc
            cfg.set(key, parsed, lineno)
        return cfg.validate()

    def set(self, key: str, value, lineno: int = 0) -> None:
        parts = key.split(".")
        if parts == ["seed"]:
            self.seed = int(value)
            return
        if len(parts) != 2 or not hasattr(self, parts[0]):
            raise KeyError(f"config line {lineno}: unknown key {key!r}")
        section = getattr(self, parts[0])
        if not dataclasses.is_dataclass(section) or parts[1] not in {f.name for f in dataclasses.fields(section)}:
            raise KeyError(f"config line {lineno}: unknown key {key!r}")
        current = getattr(section, parts[1])
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        setattr(section, parts[1], value)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())
