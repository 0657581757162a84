"""Pseudo-labelling, training, inference and evaluation over a dataset tree."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data_io as io
from . import metrics as M
from . import supervision as S
from . import tensor as T
from .config import RunConfig
from .model import PointVSOD

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# -- pseudo-labels ----------------------------------------------------------
@dataclass
class PseudoLabelSummary:
    written: int
    skipped: int
    coverage: float

    def line(self) -> str:
        return (f"pseudolabel: {self.written} maps written, {self.skipped} frames skipped "
                f"(no annotation), labelled coverage {100 * self.coverage:.2f}%")


def pseudolabel_clip(clip: io.ClipSample, cfg: RunConfig) -> dict:
    """frame name -> PseudoLabel for every annotated frame of the clip."""
    out = {}
    for path in clip.frames:
        ann = clip.annotations.get(Path(path).name)
        if ann is None:
            continue
        out[Path(path).name] = S.flood_fill(io.load_image(path), ann, cfg.floodfill.gamma,
                                            cfg.floodfill.threshold)
    return out


def run_pseudolabel(cfg: RunConfig, data_root, out_dir) -> PseudoLabelSummary:
    out_dir = Path(out_dir)
    written = skipped = 0
    labelled = total = 0
    for clip in io.scan_dataset(data_root):
        labels = pseudolabel_clip(clip, cfg)
        skipped += len(clip.frames) - len(labels)
        if not labels:
            continue
        (out_dir / clip.name).mkdir(parents=True, exist_ok=True)
        for name, pl in labels.items():
            io.write_pgm(out_dir / clip.name / (Path(name).stem + ".pgm"), pl.labels)
            written += 1
            labelled += int(pl.labeled.sum())
            total += pl.labels.size
    if skipped:
        log.warning("%d frames skipped without annotation", skipped)
    return PseudoLabelSummary(written, skipped, labelled / total if total else 0.0)


# -- training data ----------------------------------------------------------
@dataclass
class ClipArrays:
    name: str
    frames: np.ndarray   # (n, H, W, 3) float
    flows: np.ndarray    # (n, H, W, 2) pixel displacements
    labels: np.ndarray   # (n, H, W) uint8 tri-level
    edges: np.ndarray    # (n, H, W)
    gt: Optional[np.ndarray] = None


def load_training_clip(clip: io.ClipSample, cfg: RunConfig, labels_dir=None) -> ClipArrays:
    frames = clip.load_frames()
    flows = clip.load_flows().astype(np.float64)
    if labels_dir is not None:
        labels = np.stack([io.read_pgm(Path(labels_dir) / clip.name / (Path(p).stem + ".pgm"))
                           for p in clip.frames])
    else:
        pls = pseudolabel_clip(clip, cfg)
        labels = np.stack([pls[n].labels if n in pls else np.full(frames.shape[1:3], S.UNLABELED, np.uint8)
                           for n in clip.frame_names])
    edges = np.stack([S.edge_target(f, cfg.loss.edge_quantile) for f in frames])
    gt = clip.load_gt() if clip.gt else None
    return ClipArrays(clip.name, frames, flows, labels, edges, gt)


def augment(rng: np.random.Generator, batch: dict, hflip: bool, crop: float) -> dict:
    """Horizontal flip and random crop (nearest-resized back) applied per clip."""
    if hflip and rng.random() < 0.5:
        batch = {k: v[:, :, ::-1].copy() for k, v in batch.items()}
        batch["flows"][..., 0] *= -1
    if crop > 0:
        h, w = batch["frames"].shape[1:3]
        ch, cw = max(2, int(round(h * (1 - crop)))), max(2, int(round(w * (1 - crop))))
        y0, x0 = rng.integers(0, h - ch + 1), rng.integers(0, w - cw + 1)
        ys = y0 + (np.arange(h) * ch // h)
        xs = x0 + (np.arange(w) * cw // w)
        batch = {k: v[:, ys][:, :, xs].copy() for k, v in batch.items()}
        batch["flows"] = batch["flows"] * np.array([w / cw, h / ch])
    return batch


# -- optimisers -------------------------------------------------------------
class Momentum:
    def __init__(self, params, momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lrs):
        for p, v, lr in zip(self.params, self.velocity, lrs):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= lr * v


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lrs):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v, lr in zip(self.params, self.m, self.v, lrs):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def poly_lr(base: float, step: int, total: int, power: float) -> float:
    return base * (1.0 - step / max(total, 1)) ** power


# -- training ---------------------------------------------------------------
LOG_HEADER = "# step total l_bce l_pbce l_smooth l_gcrf\n"


def format_log_line(step: int, total: float, terms: dict) -> str:
    vals = [total, terms["bce"], terms["pbce"], terms["smooth"], terms["gcrf"]]
    return f"{step} " + " ".join(repr(float(v)) for v in vals) + "\n"


class Trainer:
    def __init__(self, cfg: RunConfig, clips: list, image_hw: tuple):
        self.cfg = cfg
        self.clips = clips
        self.dtype = np.dtype(cfg.train.dtype)
        self.model = PointVSOD(cfg, image_hw).astype(self.dtype)
        names = [n for n, _ in self.model.named_parameters()]
        self.params = self.model.parameters()
        lcfa = self.model.lcfa_parameter_names()
        self.is_lcfa = [n in lcfa for n in names]
        self.rng = np.random.default_rng(cfg.seed + 1)
        self._order: list = []
        self._make_optimizer()

    def _make_optimizer(self):
        o = self.cfg.optim
        if o.name == "adam":
            self.opt = Adam(self.params, o.beta1, o.beta2, o.adam_eps)
        else:
            self.opt = Momentum(self.params, o.momentum)

    def _next_clips(self, count: int) -> list:
        picked = []
        while len(picked) < count:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.clips)))
            picked.append(self.clips[self._order.pop(0)])
        return picked

    def _batch(self, still: bool) -> tuple:
        t = self.cfg.train
        n = t.clip_len
        parts = {"frames": [], "flows": [], "labels": [], "edges": []}
        for clip in self._next_clips(t.clips_per_batch):
            total = clip.frames.shape[0]
            take = min(n, total)
            start = int(self.rng.integers(0, total - take + 1))
            sl = slice(start, start + take)
            sample = {"frames": clip.frames[sl], "flows": clip.flows[sl],
                      "labels": clip.labels[sl], "edges": clip.edges[sl]}
            if still:
                sample["flows"] = np.zeros_like(sample["flows"])
            if t.hflip or t.random_crop > 0:
                sample = augment(self.rng, sample, t.hflip, t.random_crop)
            for k in parts:
                parts[k].append(sample[k])
        batch = {k: np.concatenate(v) for k, v in parts.items()}
        batch["flow_rgb"] = np.stack([io.flow_to_rgb(f) for f in batch.pop("flows")])
        clip_len = 1 if still else min(n, min(c.frames.shape[0] for c in self.clips))
        return batch, clip_len

    def step(self, step: int, total_steps: int, phase: str) -> tuple:
        still = phase == "still"
        batch, clip_len = self._batch(still)
        frames = batch["frames"].astype(self.dtype)
        try:
            out = self.model(frames, batch["flow_rgb"].astype(self.dtype), clip_len, use_lcfa=not still)
        except T.NonFiniteError as exc:
            raise TrainingError(f"step {step}: non-finite activations in the forward pass ({exc})") from None
        targets = S.Targets(batch["frames"], batch["labels"], batch["edges"])
        terms = S.total_loss(out.maps, targets, self.cfg.loss)
        n_frames = frames.shape[0]
        for key, value in terms.parts.items():
            if not math.isfinite(value):
                raise TrainingError(f"step {step}: non-finite loss in term {key[1]} on head {key[0]}")
        loss = terms.total * (1.0 / n_frames)
        self.model.zero_grad()
        loss.backward()
        self._clip_gradients()
        o = self.cfg.optim
        lr = poly_lr(o.lr, step, total_steps, o.poly_power)
        finetune = phase == "clip" and self.cfg.train.still_steps > 0
        lrs = [lr if (is_l or not finetune) else lr * o.finetune_ratio for is_l in self.is_lcfa]
        self.opt.step(lrs)
        per_term = {k: v / n_frames for k, v in terms.by_term().items()}
        return float(loss.data), per_term

    def _clip_gradients(self):
        limit = self.cfg.optim.grad_clip
        if limit <= 0:
            return
        norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                             for p in self.params if p.grad is not None))
        if norm > limit:
            for p in self.params:
                if p.grad is not None:
                    p.grad *= limit / norm


def train(cfg: RunConfig, data_root, out_dir, labels_dir=None) -> Path:
    """Train and write ``loss.log`` plus ``checkpoint/`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = [load_training_clip(c, cfg, labels_dir) for c in io.scan_dataset(data_root)]
    image_hw = clips[0].frames.shape[1:3]
    trainer = Trainer(cfg, clips, image_hw)
    t = cfg.train
    log_path = out_dir / "loss.log"
    with open(log_path, "w") as fh:
        fh.write(LOG_HEADER)
        step = 0
        for phase, count in (("still", t.still_steps), ("clip", t.steps)):
            for i in range(count):
                total, terms = trainer.step(i, count, phase)
                fh.write(format_log_line(step, total, terms))
                step += 1
                if t.checkpoint_every and step % t.checkpoint_every == 0:
                    save_model(trainer.model, cfg, out_dir / f"checkpoint_{step:06d}")
            if phase == "still" and count:
                # fresh optimizer state for the finetune phase
                trainer._make_optimizer()
    save_model(trainer.model, cfg, out_dir / "checkpoint")
    (out_dir / "config.txt").write_text(cfg.dumps())
    return out_dir


def save_model(model: PointVSOD, cfg: RunConfig, directory) -> None:
    io.save_checkpoint(directory, model.state_dict(),
                       {"image_hw": list(model.image_hw), "config": cfg.to_flat()})


def load_model(cfg: RunConfig, directory) -> PointVSOD:
    """Rebuild a trained model; the architecture recorded in the checkpoint wins over ``cfg``."""
    state, meta = io.load_checkpoint(directory)
    hw = tuple(meta.get("image_hw", (cfg.data.size, cfg.data.size)))
    if "config" in meta:
        cfg = RunConfig.from_flat(meta["config"])
    model = PointVSOD(cfg, hw).astype(np.dtype(cfg.train.dtype))
    model.load_state_dict(state)
    return model


def read_loss_log(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    return np.array([[float(v) for v in r] for r in rows])


# -- inference --------------------------------------------------------------
def predict_clip(model: PointVSOD, clip: io.ClipSample, clip_len: int) -> np.ndarray:
    """Saliency maps (n, H, W) in [0, 1] for every frame of the clip."""
    frames = clip.load_frames()
    if tuple(frames.shape[1:3]) != model.image_hw:
        raise ValueError(f"clip {clip.name}: frames {frames.shape[1:3]} but model expects {model.image_hw}")
    flow_rgb = np.stack([io.flow_to_rgb(f) for f in clip.load_flows()])
    dtype = model.encoder.pos_embed.data.dtype
    out = []
    for s in range(0, len(frames), clip_len):
        fr, fl = frames[s:s + clip_len].astype(dtype), flow_rgb[s:s + clip_len].astype(dtype)
        res = model(fr, fl, fr.shape[0])
        out.append(res.maps["s_final"].data.astype(np.float64))
    return np.concatenate(out)


def run_infer(cfg: RunConfig, checkpoint, data_root, out_dir) -> list:
    model = load_model(cfg, checkpoint)
    out_dir = Path(out_dir)
    written = []
    root = Path(data_root)
    clips = [io.load_clip(root)] if (root / "frames").is_dir() else io.scan_dataset(root)
    for clip in clips:
        maps = predict_clip(model, clip, cfg.train.clip_len)
        (out_dir / clip.name).mkdir(parents=True, exist_ok=True)
        for p, m in zip(clip.frames, maps):
            path = out_dir / clip.name / (Path(p).stem + ".pgm")
            io.write_pgm(path, io.to_uint8(m))
            written.append(path)
    return written


# -- evaluation -------------------------------------------------------------
@dataclass
class EvalReport:
    frames: list
    sequences: dict   # name -> Summary
    overall: M.Summary
    unmatched: list

    def rows_csv(self) -> str:
        lines = ["sequence,frame,mae,f_beta_max,s_measure"]
        for f in self.frames:
            lines.append(f"{f.sequence},{f.frame},{f.mae!r},{f.f_beta_max!r},{f.s_measure!r}")
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        out = []
        for name, s in list(self.sequences.items()) + [("overall", self.overall)]:
            out += [f"{name}.frames = {s.count}", f"{name}.mae = {s.mae:.6f}",
                    f"{name}.f_beta_max = {s.f_beta_max:.6f}", f"{name}.s_measure = {s.s_measure:.6f}"]
        out.append(f"unmatched = {len(self.unmatched)}")
        return "\n".join(out) + "\n"

    def sweep_csv(self) -> str:
        s = self.overall
        lines = ["threshold,precision,recall,f_beta"]
        for t, p, r, f in zip(M.THRESHOLDS, s.precision, s.recall, s.f_curve):
            lines.append(f"{t!r},{p!r},{r!r},{f!r}")
        return "\n".join(lines) + "\n"


def _gt_path(gt_root: Path, seq: str, name: str) -> Optional[Path]:
    for cand in (gt_root / seq / "gt" / name, gt_root / seq / name):
        if cand.exists():
            return cand
    return None


def run_eval(pred_dir, gt_dir, fmax_mode: str = "pr_curve") -> EvalReport:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    frames, unmatched = [], []
    for seq_dir in sorted(d for d in pred_dir.iterdir() if d.is_dir()):
        for pred_path in sorted(seq_dir.glob("*.pgm")):
            gt_path = _gt_path(gt_dir, seq_dir.name, pred_path.name)
            if gt_path is None:
                unmatched.append(f"{seq_dir.name}/{pred_path.name}")
                continue
            pred = io.read_pgm(pred_path).astype(np.float64) / 255.0
            gt = io.read_pgm(gt_path) > 127
            frames.append(M.evaluate_frame(pred, gt, seq_dir.name, pred_path.name))
    if not frames:
        raise ValueError(f"no predicted frame in {pred_dir} has ground truth under {gt_dir}")
    if unmatched:
        log.warning("%d predicted frames without ground truth excluded", len(unmatched))
    seqs = {}
    for name in sorted({f.sequence for f in frames}):
        seqs[name] = M.summarize([f for f in frames if f.sequence == name], fmax_mode=fmax_mode)
    return EvalReport(frames, seqs, M.summarize(frames, fmax_mode=fmax_mode), unmatched)


def tree_digest(root) -> str:
    """SHA-256 over relative paths and file bytes; equal trees give equal digests."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
