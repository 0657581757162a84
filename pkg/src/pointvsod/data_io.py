"""File formats and the synthetic clip generator.

Dataset layout (one directory per clip)::

    <root>/<clip>/frames/0000.ppm   RGB frames (binary P6)
    <root>/<clip>/flow/0000.flo     forward flow of each frame
    <root>/<clip>/gt/0000.pgm       ground-truth masks (optional)
    <root>/<clip>/points.jsonl      point annotations (optional)
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .supervision import PointAnnotation

FLO_MAGIC = 202021.25


class FormatError(ValueError):
    """Malformed input file; the message carries the position."""


# -- .flo -------------------------------------------------------------------
def read_flo(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file into an (H, W, 2) float32 array of (u, v)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header at byte {len(raw)} (need 12)")
    magic = struct.unpack_from("<f", raw, 0)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    w, h = struct.unpack_from("<ii", raw, 4)
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: non-positive extent {w}x{h} at byte 4")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)} (need {need})")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes after byte {need}")
    return np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float32)


def write_flo(path, flow) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    header = struct.pack("<fii", FLO_MAGIC, w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(flow, dtype="<f4").tobytes())


def flow_to_rgb(flow) -> np.ndarray:
    """Colour-wheel encoding: hue from direction, saturation from magnitude / frame max.

    Value is ``0.5 + 0.5 * saturation`` so a still frame maps to neutral grey.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    peak = mag.max() if mag.size else 0.0
    sat = mag / peak if peak > 0 else np.zeros_like(mag)
    hue = (np.arctan2(v, u) / (2 * np.pi)) % 1.0
    val = 0.5 + 0.5 * sat
    return hsv_to_rgb(hue, sat, val)


def hsv_to_rgb(h, s, v) -> np.ndarray:
    h6 = (np.asarray(h) % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(np.shape(h) + (3,))
    for k, (r, g, b) in enumerate(table):
        sel = i == k
        out[sel, 0], out[sel, 1], out[sel, 2] = r[sel], g[sel], b[sel]
    return np.clip(out, 0.0, 1.0)


# -- PNM --------------------------------------------------------------------
def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header at byte 0, got {raw[:2]!r}")
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header at byte {pos}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit maps supported (maxval {maxval})")
    need = w * h * channels
    if len(raw) - pos < need:
        raise FormatError(f"{path}: truncated payload at byte {len(raw)} (need {pos + need})")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    return data.reshape((h, w, channels) if channels > 1 else (h, w)).copy()


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6", 3)


def _write_pnm(path, arr: np.ndarray, magic: bytes) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"PNM writer needs uint8 data, got {arr.dtype}")
    h, w = arr.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())


def write_pgm(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D map, got {arr.shape}")
    _write_pnm(path, arr, b"P5")


def write_ppm(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got {arr.shape}")
    _write_pnm(path, arr, b"P6")


def to_uint8(x) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """RGB frame as float64 in [0, 1]."""
    return read_ppm(path).astype(np.float64) / 255.0


# -- annotations ------------------------------------------------------------
def parse_points(text: str, sizes: Optional[dict] = None, source: str = "<points>") -> list:
    """Parse annotation JSONL.  ``sizes`` maps frame id -> (h, w) for bounds checks."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frame = rec["frame"]
            fg = [tuple(int(v) for v in p) for p in rec["fg"]]
            bg = [tuple(int(v) for v in p) for p in rec["bg"]]
            if not isinstance(frame, str) or any(len(p) != 2 for p in fg + bg):
                raise ValueError("points must be [x, y] pairs and frame a string")
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{source}: malformed annotation on line {lineno}: {exc}") from None
        ann = PointAnnotation(frame, fg, bg)
        if sizes is not None and frame in sizes:
            ann.validate(sizes[frame])
        out.append(ann)
    return out


def read_points(path, sizes: Optional[dict] = None) -> list:
    return parse_points(Path(path).read_text(), sizes, str(path))


def format_points(annotations) -> str:
    return "".join(json.dumps({"frame": a.frame, "fg": [list(p) for p in a.fg],
                               "bg": [list(p) for p in a.bg]}, separators=(",", ":")) + "\n"
                   for a in annotations)


def write_points(path, annotations) -> None:
    Path(path).write_text(format_points(annotations))


# -- checkpoints ------------------------------------------------------------
MANIFEST = "manifest.json"
PAYLOAD = "params.bin"


def save_checkpoint(directory, state, meta: Optional[dict] = None) -> None:
    """Write ``manifest.json`` (names, shapes, offsets) and a flat float32 ``params.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, value in state.items():
        arr = np.asarray(value)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").ravel())
        offset += arr.size
    manifest = {"format": "pointvsod-checkpoint-1", "dtype": "float32-le", "count": offset,
                "params": entries, "meta": meta or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    (directory / PAYLOAD).write_bytes(payload.astype("<f4").tobytes())


def load_checkpoint(directory):
    """Return (ordered state dict of float32 arrays, meta)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    raw = (directory / PAYLOAD).read_bytes()
    count = manifest["count"]
    if len(raw) != 4 * count:
        raise FormatError(f"{directory / PAYLOAD}: {len(raw)} bytes, manifest expects {4 * count}")
    flat = np.frombuffer(raw, dtype="<f4")
    state = OrderedDict()
    for entry in manifest["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        state[entry["name"]] = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"]).copy()
    return state, manifest.get("meta", {})


# -- clips ------------------------------------------------------------------
@dataclass
class ClipSample:
    name: str
    frames: list                      # frame paths, sorted
    flows: list                       # flow paths (or None for still frames)
    annotations: dict = field(default_factory=dict)   # frame name -> PointAnnotation
    gt: list = field(default_factory=list)

    @property
    def frame_names(self) -> list:
        return [Path(p).name for p in self.frames]

    def load_frames(self) -> np.ndarray:
        return np.stack([load_image(p) for p in self.frames])

    def load_flows(self) -> np.ndarray:
        frames_hw = None
        out = []
        for fp, flow_path in zip(self.frames, self.flows):
            if flow_path is None:
                if frames_hw is None:
                    frames_hw = load_image(fp).shape[:2]
                out.append(np.zeros(frames_hw + (2,), dtype=np.float32))
                continue
            flow = read_flo(flow_path)
            img_hw = load_image(fp).shape[:2]
            if flow.shape[:2] != img_hw:
                raise FormatError(f"{flow_path}: flow {flow.shape[:2]} does not match frame {img_hw}")
            out.append(flow)
        return np.stack(out)

    def load_gt(self) -> np.ndarray:
        return np.stack([read_pgm(p) > 127 for p in self.gt])


def load_clip(clip_dir) -> ClipSample:
    clip_dir = Path(clip_dir)
    frames = sorted((clip_dir / "frames").glob("*.ppm"))
    if not frames:
        raise FileNotFoundError(f"{clip_dir}: no frames/*.ppm")
    flows = []
    for f in frames:
        fp = clip_dir / "flow" / (f.stem + ".flo")
        flows.append(fp if fp.exists() else None)
    annotations = {}
    points = clip_dir / "points.jsonl"
    if points.exists():
        h, w = read_ppm(frames[0]).shape[:2]
        sizes = {f.name: (h, w) for f in frames}
        annotations = {a.frame: a for a in read_points(points, sizes)}
    gt = [clip_dir / "gt" / (f.stem + ".pgm") for f in frames]
    gt = gt if all(p.exists() for p in gt) else []
    return ClipSample(clip_dir.name, frames, flows, annotations, gt)


def scan_dataset(root) -> list:
    root = Path(root)
    clips = [load_clip(d) for d in sorted(root.iterdir()) if d.is_dir() and (d / "frames").is_dir()]
    if not clips:
        raise FileNotFoundError(f"{root}: no clip directories found")
    return clips


# -- synthetic data ---------------------------------------------------------
def _texture(rng, h, w, base, amplitude, smooth):
    noise = gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(smooth, smooth, 0))
    noise /= np.abs(noise).max() + 1e-12
    return np.clip(base + amplitude * noise, 0.0, 1.0)


def _shape_mask(kind, h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "ellipse":
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def synth_clip(rng, frames: int, hw: int):
    """One clip: a textured shape moving at constant velocity over a textured background.

    Returns (frames (n, H, W, 3) uint8, masks (n, H, W) bool, flows (n, H, W, 2),
    fg points, bg points).
    """
    h = w = hw
    bg_base = rng.uniform(0.2, 0.8, size=3)
    background = _texture(rng, h, w, bg_base, 0.25, smooth=2.0)
    fg_base = np.clip(1.0 - bg_base + rng.uniform(-0.1, 0.1, size=3), 0.05, 0.95)
    kind = "ellipse" if rng.random() < 0.5 else "box"
    ry, rx = rng.uniform(0.14, 0.22, size=2) * hw
    vy, vx = rng.uniform(-2.5, 2.5, size=2).round()
    if vy == 0 and vx == 0:
        vx = 2.0
    margin_y = ry + abs(vy) * frames + 1
    margin_x = rx + abs(vx) * frames + 1
    cy0 = rng.uniform(margin_y, h - margin_y) if h > 2 * margin_y else h / 2
    cx0 = rng.uniform(margin_x, w - margin_x) if w > 2 * margin_x else w / 2
    cy0, cx0 = round(cy0), round(cx0)
    fg_tex = _texture(rng, h + 2 * hw, w + 2 * hw, fg_base, 0.03, smooth=1.5)

    imgs, masks, flows, fgs, bgs = [], [], [], [], []
    for t in range(frames):
        cy, cx = cy0 + vy * t, cx0 + vx * t
        mask = _shape_mask(kind, h, w, cy, cx, ry, rx)
        # texture moves with the shape
        oy, ox = int(hw - vy * t), int(hw - vx * t)
        tex = fg_tex[oy:oy + h, ox:ox + w]
        img = np.where(mask[..., None], tex, background)
        flow = np.zeros((h, w, 2), dtype=np.float32)
        flow[mask] = (vx, vy)
        ys, xs = np.nonzero(mask)
        py, px = int(round(ys.mean())), int(round(xs.mean()))
        if not mask[py, px]:
            k = np.argmin((ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2)
            py, px = int(ys[k]), int(xs[k])
        outside = np.argwhere(~mask)
        by, bx = outside[rng.integers(len(outside))]
        imgs.append((np.round(img * 255)).astype(np.uint8))
        masks.append(mask)
        flows.append(flow)
        fgs.append((px, py))
        bgs.append((int(bx), int(by)))
    return np.stack(imgs), np.stack(masks), np.stack(flows), fgs, bgs


def synth_dataset(out, seed: int = 0, num_clips: int = 8, frames_per_clip: int = 4, hw: int = 64) -> Path:
    """Write a deterministic synthetic dataset tree under ``out``."""
    if hw < 16:
        raise ValueError("synthetic frames must be at least 16 pixels on a side")
    out = Path(out)
    rng = np.random.default_rng(seed)
    for c in range(num_clips):
        clip = out / f"clip_{c:03d}"
        for sub in ("frames", "flow", "gt"):
            (clip / sub).mkdir(parents=True, exist_ok=True)
        imgs, masks, flows, fgs, bgs = synth_clip(rng, frames_per_clip, hw)
        anns = []
        for t in range(frames_per_clip):
            name = f"{t:04d}"
            write_ppm(clip / "frames" / f"{name}.ppm", imgs[t])
            write_flo(clip / "flow" / f"{name}.flo", flows[t])
            write_pgm(clip / "gt" / f"{name}.pgm", masks[t].astype(np.uint8) * 255)
            anns.append(PointAnnotation(f"{name}.ppm", [fgs[t]], [bgs[t]]))
        write_points(clip / "points.jsonl", anns)
    return out
