"""Command-line entry point: ``imnet synth|train|detect|eval|gradcheck``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckptmod
from . import config as cfgmod
from . import synth
from .checks import run_suite
from .config import ABLATION_MAPPING
from .errors import DatasetError, IMNetError, ValidationError
from .head import labels_to_gray, overlay
from .metrics import score_dataset
from .tensor import deterministic
from .train import jsonl_writer, predict_batches, split, train

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _out_dir_ok(path: Path) -> None:
    parent = path.parent if path.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise ValidationError(f"output directory {parent} does not exist")


def _no_config(args, command: str) -> None:
    if args.config is not None:
        raise ValidationError(f"{command} takes its configuration from the checkpoint; drop --config")


def cmd_synth(args) -> int:
    _no_config(args, "synth")
    if args.count < 1:
        raise ValidationError("--count must be >= 1")
    if not 32 <= args.size <= 256:
        raise ValidationError("--size must be in 32..256")
    attack = synth.AttackConfig.with_attacks(args.rotate, args.scale, args.blur, args.jpeg).validate()
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"{out} exists and is not a directory")
    samples = synth.generate(args.count, args.size, args.seed, attack)
    try:
        synth.write_dataset(out, samples)
    except OSError as exc:
        raise IMNetError(f"writing dataset to {out}: {exc}") from None
    frac = float(np.mean([synth.forged_fraction(s) for s in samples]))
    print(f"wrote {len(samples)} samples to {out} (size {args.size}, mean forged fraction {frac:.4f})")
    return EXIT_OK


def _load_train_config(args) -> cfgmod.RunConfig:
    if args.config is None:
        raise ValidationError("train needs --config")
    cfg = cfgmod.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.proto_rounds is not None:
        overrides["prototype.update_rounds"] = args.proto_rounds
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    items = synth.read_dataset(args.data)
    size = cfg.backbone.input_size
    for image_id, image, _ in items:
        if image.shape[:2] != (size, size):
            raise DatasetError(f"image {image_id} is {image.shape[1]}x{image.shape[0]}, config expects {size}x{size}")
    out = Path(args.out)
    _out_dir_ok(out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    _out_dir_ok(log_path)
    train_items, val_items = split(items, cfg.train.val_fraction)
    with open(log_path, "w", encoding="utf-8") as log_file:
        to_file = jsonl_writer(log_file)
        to_stdout = jsonl_writer(sys.stdout) if not args.quiet else None

        def emit(rec):
            to_file(rec)
            if to_stdout:
                to_stdout(rec)

        result = train(cfg, train_items, val_items, emit=emit)
        ckptmod.save(out, ckptmod.Checkpoint.from_params(cfg, result.params))
        emit({"event": "saved", "path": str(out), "best_step": result.best_step, "best_f1": result.best_f1})
    return EXIT_OK


def _load_for_inference(path, size_of) -> ckptmod.Checkpoint:
    ckpt = ckptmod.load(path)
    want = ckpt.config.backbone.input_size
    for name, shape in size_of:
        if shape[:2] != (want, want):
            raise ValidationError(f"{name} is {shape[1]}x{shape[0]} but the checkpoint expects "
                                  f"{want}x{want}; resize the image first")
    return ckpt


def cmd_detect(args) -> int:
    _no_config(args, "detect")
    image = synth.read_image(args.image)
    ckpt = _load_for_inference(args.checkpoint, [(args.image, image.shape)])
    out = Path(args.out)
    _out_dir_ok(out)
    if args.overlay:
        _out_dir_ok(Path(args.overlay))
    labels = predict_batches(ckpt.config, ckpt.params(requires_grad=False), [image])[0]
    Image.fromarray(labels_to_gray(labels), mode="L").save(out)
    if args.overlay:
        Image.fromarray(overlay(image, labels), mode="RGB").save(args.overlay)
    print(f"wrote mask {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _no_config(args, "eval")
    items = synth.read_dataset(args.data)
    ckpt = _load_for_inference(args.checkpoint, [(i, im.shape) for i, im, _ in items])
    report_path = Path(args.report)
    _out_dir_ok(report_path)
    preds = predict_batches(ckpt.config, ckpt.params(requires_grad=False), [im for _, im, _ in items])
    report = score_dataset(zip(preds, [t for _, _, t in items]), [i for i, _, _ in items])
    report.meta = {"ablation": ckpt.config.ablation, "ablation_mapping": ABLATION_MAPPING[ckpt.config.ablation],
                   "prototype_rounds": ckpt.config.prototype.rounds}
    report.write(report_path)
    agg = report.aggregate["combined"]
    print(f"combined P={agg.precision:.4f} R={agg.recall:.4f} F1={agg.f1:.4f} over {len(items)} images")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.tiny()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    reports = run_suite(cfg, tolerance=args.tolerance)
    for rep in reports:
        print(rep.line())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad arguments are validation errors, not argparse's default exit 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    common.add_argument("--config", default=None, help="flat key = value run configuration")

    parser = _Parser(prog="imnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic copy-move dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--rotate", action="store_true")
    p.add_argument("--scale", action="store_true")
    p.add_argument("--blur", action="store_true")
    p.add_argument("--jpeg", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSON-lines training log (default: <out>.log.jsonl)")
    p.add_argument("--proto-rounds", type=int, default=None, help="prototype update rounds per forward pass")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="write a 0/128/255 mask for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks (float64)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "synth":
        args.seed = 0
    try:
        ctx = deterministic() if args.deterministic else contextlib.nullcontext()
        with ctx:
            return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IMNetError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
