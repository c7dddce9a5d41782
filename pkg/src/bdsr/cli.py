"""Command-line entry point.

Subcommands: synth, train, upscale, eval, verify. Flags beat config-file
keys; config files are flat KEY=VALUE text with # comments. Exit codes:
0 success, 1 validation problem, 2 I/O or file-format problem, 3 numeric
divergence.
"""

import argparse
import sys

import numpy as np

from . import backend, datasynth, models, netpbm, srpipeline, trainer
from .errors import (BdsrError, ConfigError, DivergenceError, FormatError,
                     InputError)
from .numtensor import derive_seed

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep 1 = validation
        raise ConfigError(message)


def _read_config(path):
    conf = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {line!r}")
            key, value = line.split("=", 1)
            conf[key.strip()] = value.strip()
    return conf


def _merge_config(args, parser_defaults, allowed):
    """Config-file values fill in anything the command line left at its
    default; unknown keys are rejected by name."""
    if not args.config:
        return args
    conf = _read_config(args.config)
    for key, value in conf.items():
        dest = key.replace("-", "_")
        if dest not in allowed:
            raise ConfigError(f"unknown config key: {key}")
        if getattr(args, dest) == parser_defaults.get(dest):
            caster = allowed[dest]
            try:
                setattr(args, dest, caster(value))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    return args


def _bool(value):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _classes(value):
    names = [c.strip() for c in value.split(",") if c.strip()]
    for name in names:
        if name not in datasynth.PROVENANCE_CODES:
            raise ConfigError(f"--classes: unknown class {name!r}")
    if not names:
        raise ConfigError("--classes: no classes given")
    return tuple(names)


def build_parser():
    top = _Parser(prog="bdsr", description=__doc__.split("\n")[0])
    top.add_argument("--config", default=None, help="KEY=VALUE config file")
    top.add_argument("--seed", type=int, default=0)
    top.add_argument("--threads", type=int, default=1,
                     help="cap worker parallelism (results do not depend on it)")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a patch archive")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--r", type=int, choices=(2, 4), default=2)
    p.add_argument("--pages", type=int, default=4)
    p.add_argument("--chars-per-page", type=int, default=36)
    p.add_argument("--glyph-scale", type=int, default=8)
    p.add_argument("--patch-stride", type=int, default=4)
    p.add_argument("--classes", type=_classes,
                   default=("decimated", "masked", "glyph", "rendered"))
    p.add_argument("--mask-threshold", type=float, default=-1.0)

    p = sub.add_parser("train", help="train a model on an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--arch", choices=tuple(models.BUILDERS), default="cts")
    p.add_argument("--r", type=int, choices=(2, 4), default=2)
    p.add_argument("--act", choices=("relu", "prelu"), default="relu")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="loss log path")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--steps", type=int, default=0, help="stop after this many steps")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("upscale", help="upscale a PBM page")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="input PBM page")
    p.add_argument("--out-gray", default=None, help="PGM output path")
    p.add_argument("--out-bin", default=None, help="binarized PBM output path")
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--gamma-sweep", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--gt", default=None, help="ground-truth page for metrics")

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    p.add_argument("--pred", default=None, help="predicted PBM/PGM")
    p.add_argument("--gt", default=None, help="ground-truth PBM/PGM")
    p.add_argument("--ckpt", default=None, help="score a checkpoint's loss instead")
    p.add_argument("--archive", default=None, help="pair archive for --ckpt")

    sub.add_parser("verify", help="run the self-check suite")
    return top


# allowed config-file keys per command (value = parser for the raw string)
_ALLOWED = {
    "synth": {"seed": int, "threads": int, "out": str, "r": int, "pages": int,
              "chars_per_page": int, "glyph_scale": int, "patch_stride": int,
              "classes": _classes, "mask_threshold": float},
    "train": {"seed": int, "threads": int, "archive": str, "arch": str, "r": int,
              "act": str, "out": str, "log": str, "epochs": int, "batch": int,
              "steps": int, "checkpoint_every": int, "resume": str},
    "upscale": {"seed": int, "threads": int, "ckpt": str, "input": str,
                "out_gray": str, "out_bin": str, "stride": int, "gamma": float,
                "gamma_sweep": _bool, "threshold": float, "gt": str},
    "eval": {"seed": int, "threads": int, "pred": str, "gt": str, "ckpt": str,
             "archive": str},
    "verify": {"seed": int, "threads": int},
}


def cmd_synth(args):
    pairs = datasynth.make_corpus(
        r=args.r, seed=args.seed, pages=args.pages, glyph_scale=args.glyph_scale,
        chars_per_page=args.chars_per_page, patch_stride=args.patch_stride,
        classes=args.classes, mask_threshold=args.mask_threshold)
    datasynth.write_archive(pairs, args.out)
    counts = pairs.class_counts()
    summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"wrote {args.out}: pairs={len(pairs)} r={pairs.r} {summary}")
    return EXIT_OK


def cmd_train(args):
    pairs = datasynth.read_archive(args.archive)
    if args.resume:
        # the checkpoint defines arch/r/act; the archive must still match
        state = trainer.load_checkpoint(args.resume)
        graph = state.graph
    else:
        state = None
        graph = models.build(args.arch, args.r, args.act,
                             seed=derive_seed(args.seed, 0))
    cfg = trainer.TrainConfig(
        batch_size=args.batch, epochs=args.epochs, seed=args.seed,
        checkpoint_every=args.checkpoint_every, checkpoint_path=args.out,
        log_path=args.log, max_steps=args.steps or None)
    state = trainer.train(graph, pairs, cfg, state)
    loss = trainer.evaluate_loss(graph, pairs)
    print(f"trained {graph.arch} x{graph.r} {graph.act}: steps={state.t} "
          f"epochs={state.epoch} loss={loss:.17g}")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_upscale(args):
    graph = trainer.load_any_model(args.ckpt)
    page = datasynth.BinaryImage(netpbm.read_pbm(args.input))
    tc = srpipeline.TileConfig(r=graph.r, stride=args.stride)
    gray = srpipeline.upscale_page(page, graph, tc)
    gc = srpipeline.GammaConfig(gamma=args.gamma,
                                binarize_threshold=args.threshold)
    shaped = srpipeline.power_law(gray, gc)
    binar = srpipeline.binarize(shaped, args.threshold)
    if args.out_gray:
        netpbm.write_pgm(gray.vals, args.out_gray)
    if args.out_bin:
        netpbm.write_pbm(binar.bits, args.out_bin)
    gt_page = None
    if args.gt:
        gt_page = datasynth.BinaryImage(netpbm.read_pbm(args.gt))
        if (gt_page.h, gt_page.w) != (gray.h, gray.w):
            raise InputError(
                f"ground truth is {gt_page.h}x{gt_page.w}, output is {gray.h}x{gray.w}")
        gt_gray = srpipeline.GrayImage(gt_page.bits.astype(np.float64))
        print(f"psnr={srpipeline.psnr(gray, gt_gray):.4f}")
        print(f"fscore={srpipeline.pixel_fscore(binar, gt_page):.6f}")
    if args.gamma_sweep:
        rows = srpipeline.gamma_sweep(gray, gt_page, args.threshold)
        for g, ink, score in rows:
            extra = f" fscore={score:.6f}" if score is not None else ""
            print(f"gamma={g:.1f} ink={ink}{extra}")
        if gt_page is not None:
            print(f"best_gamma={srpipeline.best_gamma(rows):.1f}")
    print(f"upscaled {args.input}: x{graph.r} gamma={args.gamma}")
    return EXIT_OK


def _load_any_image(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P4":
        bits = netpbm.read_pbm(path)
        return srpipeline.GrayImage(bits.astype(np.float64)), datasynth.BinaryImage(bits)
    if magic == b"P5":
        vals = netpbm.read_pgm(path)
        return srpipeline.GrayImage(vals), srpipeline.binarize(srpipeline.GrayImage(vals))
    raise FormatError(f"{path}: neither P4 nor P5 netpbm")


def cmd_eval(args):
    if args.ckpt and args.archive:
        graph = trainer.load_any_model(args.ckpt)
        pairs = datasynth.read_archive(args.archive)
        print(f"loss={trainer.evaluate_loss(graph, pairs):.17g}")
        return EXIT_OK
    if args.pred and args.gt:
        pred_gray, pred_bin = _load_any_image(args.pred)
        gt_gray, gt_bin = _load_any_image(args.gt)
        print(f"psnr={srpipeline.psnr(pred_gray, gt_gray):.4f}")
        print(f"fscore={srpipeline.pixel_fscore(pred_bin, gt_bin):.6f}")
        return EXIT_OK
    raise ConfigError("eval needs --pred and --gt, or --ckpt and --archive")


def cmd_verify(args):
    from . import verify
    ok = verify.run_all(seed=args.seed)
    return EXIT_OK if ok else EXIT_VALIDATION


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "upscale": cmd_upscale,
             "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        defaults = {a.dest: a.default for a in parser._actions}
        for sp in parser._subparsers._group_actions[0].choices.values():
            defaults.update({a.dest: a.default for a in sp._actions})
        _merge_config(args, defaults, _ALLOWED[args.command])
        backend.set_num_threads(args.threads)
        return _COMMANDS[args.command](args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except BdsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
