"""``exprbench`` command line.

Exit status: 0 on success, 1 when the work itself fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import architectures as arch
from . import bench
from . import preprocess as prep
from .data import CLASS_NAMES, IMAGE_SUFFIXES, read_exclusions, read_image, write_pgm
from .errors import ExprbenchError
from .trainer import EVAL_MODES, TrainConfig, evaluate, load_checkpoint, train

log = logging.getLogger("exprbench")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _config_args(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--epochs", dest="max_epochs", type=int, default=d.max_epochs)
    p.add_argument("--val-fraction", type=float, default=d.val_fraction)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--eval-mode", choices=EVAL_MODES, default=d.eval_mode)
    p.add_argument("--split-by", choices=("source", "crop"), default=d.split_by)
    p.add_argument("--precision", choices=("float32", "float64"), default=d.precision)
    p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bit-reproducible runs")
    p.add_argument("--target-train-accuracy", type=float, default=None,
                   help="stop once an epoch's training accuracy reaches this value")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exprbench", description="CNN facial-expression benchmark toolkit.")
    parser.add_argument("--version", action="version", version=f"exprbench {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("prep", help="preprocess a directory of images into PGM files")
    p.add_argument("--method", required=True, help=f"one of {', '.join(prep.METHODS)}, optionally with :key=value")
    p.add_argument("--in", dest="src", required=True, type=Path)
    p.add_argument("--out", dest="dst", required=True, type=Path)

    p = sub.add_parser("train", help="train one architecture on one dataset")
    p.add_argument("--arch", required=True, help="builtin name or architecture file")
    p.add_argument("--data", required=True, nargs="+", help="FER-style CSV files or class directories")
    p.add_argument("--method", default="raw")
    p.add_argument("--out", required=True, type=Path, help="run directory (log.csv and checkpoints/)")
    p.add_argument("--usage", default="Training,PublicTest", help="CSV Usage values to train on")
    p.add_argument("--landmarks", help="eye landmark sidecar for a class directory")
    p.add_argument("--exclude", help="file of source ids to leave out")
    p.add_argument("--no-resume", action="store_true", help="ignore an existing last.ckpt")
    _config_args(p)

    p = sub.add_parser("eval", help="score a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True)
    p.add_argument("--method", help="defaults to the method recorded in the checkpoint")
    p.add_argument("--usage", default="PrivateTest", help="CSV Usage values to test on")
    p.add_argument("--landmarks")
    p.add_argument("--eval-mode", choices=EVAL_MODES, default="ten_crop_mean")

    p = sub.add_parser("bench", help="run an experiment plan")
    p.add_argument("--plan", required=True, type=Path)

    p = sub.add_parser("inspect", help="print layer shapes and parameter counts")
    p.add_argument("architecture", help="builtin name or architecture file")
    return parser


def _cmd_prep(args) -> int:
    method = prep.PrepMethod.parse(args.method)
    if not args.src.is_dir():
        raise ExprbenchError(f"{args.src} is not a directory")
    files = sorted(f for f in args.src.rglob("*") if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES)
    for f in files:
        target = args.dst / f.relative_to(args.src).with_suffix(".pgm")
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(target, prep.apply(method, read_image(f)))
    print(f"{len(files)} images written to {args.dst}")
    return 0


def _source(path, usages, landmarks=None, name=None):
    p = Path(path)
    marks = {(name or p.name): landmarks} if landmarks else {}
    return bench.load_source(str(p), name, [u.strip() for u in usages.split(",") if u.strip()], marks)


def _cmd_train(args) -> int:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in vars(args).items() if k in fields})
    spec = arch.load(args.arch)
    method = prep.PrepMethod.parse(args.method)
    pool = None
    for path in args.data:
        ds = _source(path, args.usage, args.landmarks)
        pool = ds if pool is None else pool.subset(pool.samples + ds.samples)
    if args.exclude:
        pool = pool.exclude(read_exclusions(args.exclude))
    pool = bench.preprocessed(pool, method)
    result = train(pool, spec, cfg, out_dir=args.out, resume=not args.no_resume,
                   metadata={"method": args.method})
    best = next(r for r in result.history if r.epoch == result.selected_epoch)
    print(f"selected epoch {result.selected_epoch} (validation accuracy {best.val_accuracy:.4f})")
    print(f"checkpoints in {args.out / 'checkpoints'}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    method = args.method or ckpt.extra.get("method", "raw")
    ds = _source(args.data, args.usage, args.landmarks)
    ds = bench.preprocessed(ds, prep.PrepMethod.parse(method))
    res = evaluate(ckpt, ds, args.eval_mode)
    print(f"{ckpt.architecture} epoch {ckpt.epoch}, method {method}, {args.eval_mode}")
    print(f"accuracy {res.accuracy:.4f} ({int(np.trace(res.confusion))}/{res.total})")
    width = max(len(n) for n in CLASS_NAMES)
    print(" " * (width + 1) + " ".join(f"{n[:4]:>5}" for n in CLASS_NAMES))
    for name, row in zip(CLASS_NAMES, res.confusion):
        print(f"{name:<{width}} " + " ".join(f"{v:>5d}" for v in row))
    return 0


def _cmd_bench(args) -> int:
    plan = bench.load_plan(args.plan)
    rows, failures = bench.run_matrix(plan)
    if rows:
        print(bench.emit_report(rows, "text"), end="")
        print(f"report: {Path(plan.out_dir) / 'report.csv'}")
    for (m, a), msg in failures.items():
        print(f"FAILED {m}/{a}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def _describe(ls) -> str:
    if ls.kind == "conv" or ls.kind in arch.POOLS:
        pad = ls.pad
        text = f"{ls.kind} {ls.kernel[0]}x{ls.kernel[1]} s{ls.stride} pad{pad.top},{pad.bottom},{pad.left},{pad.right}"
        return text + (f" c{ls.out_channels}" if ls.kind == "conv" else "")
    if ls.kind == "fc":
        return f"fc {ls.units}"
    if ls.kind == "dropout":
        return f"dropout {ls.rate:g}"
    return ls.kind


def _cmd_inspect(args) -> int:
    spec = arch.load(args.architecture)
    shapes = arch.infer_shapes(spec)
    pshapes = arch.param_shapes(spec)
    print(f"{spec.name}: input {'x'.join(map(str, spec.input_shape))}, {spec.classes} classes")
    print(f"{'#':>3}  {'layer':<28} {'output':>14} {'params':>10}")
    names = iter(arch._param_layers(spec))
    for i, (ls, shape) in enumerate(zip(spec.layers, shapes), 1):
        count = 0
        if ls.kind in ("conv", "fc"):
            pname = next(names)[0]
            count = sum(int(np.prod(pshapes[k])) for k in (f"{pname}.weight", f"{pname}.bias"))
        print(f"{i:>3}  {_describe(ls):<28} {'x'.join(map(str, shape)):>14} {count or '':>10}")
    print("trace: " + "→".join(map(str, arch.trace(spec))))
    print("fc inputs: " + ", ".join(map(str, arch.fc_input_sizes(spec))))
    print(f"parameters: {arch.param_count(spec)}")
    return 0


_COMMANDS = {"prep": _cmd_prep, "train": _cmd_train, "eval": _cmd_eval, "bench": _cmd_bench, "inspect": _cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    level = logging.WARNING - 10 * args.verbose if args.command not in ("train", "bench") else logging.INFO - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ExprbenchError, ValueError, OSError) as exc:
        print(f"exprbench {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
