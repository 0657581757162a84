"""Command-line entry point: ``pointvsod {synth,pseudolabel,train,infer,eval}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data_io as io
from . import pipeline
from .config import RunConfig


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    cfg = _config(args)
    d = cfg.data
    root = io.synth_dataset(args.out, cfg.seed, d.num_clips, d.frames_per_clip, d.size)
    print(f"synth: {d.num_clips} clips x {d.frames_per_clip} frames ({d.size}x{d.size}) -> {root}")
    return 0


def cmd_pseudolabel(args) -> int:
    cfg = _config(args)
    summary = pipeline.run_pseudolabel(cfg, args.data, args.out)
    print(summary.line())
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.steps is not None:
        cfg.train.steps = args.steps
    out = pipeline.train(cfg, args.data, args.out, args.labels)
    rows = pipeline.read_loss_log(out / "loss.log")
    if len(rows):
        print(f"train: {len(rows)} steps, loss {rows[0, 1]:.4f} -> {rows[-1, 1]:.4f}; "
              f"checkpoint at {out / 'checkpoint'}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    written = pipeline.run_infer(cfg, args.checkpoint, args.data, args.out)
    print(f"infer: {len(written)} saliency maps -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    report = pipeline.run_eval(args.pred, args.gt, args.fmax_mode)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "rows.csv").write_text(report.rows_csv())
        (out / "report.txt").write_text(report.summary_text())
        (out / "sweep.csv").write_text(report.sweep_csv())
    sys.stdout.write(report.summary_text())
    if report.unmatched:
        print(f"excluded {len(report.unmatched)} unmatched frames: {', '.join(report.unmatched)}",
              file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointvsod", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic clip dataset"))
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("pseudolabel", help="flood-fill point annotations into label maps"))
    p.add_argument("--data", required=True, help="dataset root (one directory per clip)")
    p.set_defaults(func=cmd_pseudolabel)

    p = common(sub.add_parser("train", help="train on a dataset"))
    p.add_argument("--data", required=True)
    p.add_argument("--labels", help="pseudo-label directory (generated on the fly if omitted)")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("infer", help="predict saliency maps"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root or a single clip directory")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("eval", help="score predictions against ground truth"), out_required=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="ground-truth root (<seq>/<frame>.pgm or <seq>/gt/<frame>.pgm)")
    p.add_argument("--fmax-mode", default="pr_curve", choices=["pr_curve", "per_frame"])
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, pipeline.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
