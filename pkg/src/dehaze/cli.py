"""Command-line entry point: ``dehaze {scenes,synth,train,dehaze,eval,bench}``."""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import classical, io, metrics, net, synth
from .nn import SGDConfig

log = logging.getLogger("dehaze")

METHODS = ("net", "classical", "none")


def parse_size(text: str) -> tuple[int, int]:
    """'100x100' or '100x100x3' -> (100, 100)."""
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW") from None
    if len(dims) not in (2, 3) or min(dims) < 1 or (len(dims) == 3 and dims[2] != 3):
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW or HxWx3")
    return dims[0], dims[1]


def parse_airlight(text: str):
    """'r,g,b', a single grey value, or 'jitter'."""
    if text == "jitter":
        return "jitter"
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad airlight {text!r}") from None
    if len(vals) == 1:
        vals *= 3
    if len(vals) != 3 or not all(0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError(f"airlight needs 3 values in (0, 1], got {text!r}")
    return tuple(vals)


def parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad or text!r}; choose from {METHODS}")
    return methods


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _open_ratio(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _repeats(text: str) -> int:
    v = int(text)
    if v < 3:
        raise argparse.ArgumentTypeError(f"repeats must be >= 3, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="dehaze", description=__doc__)
    p.add_argument("--seed", dest="global_seed", type=int, default=0)
    p.add_argument("--verbose", "-v", dest="global_verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenes", parents=[common],
                       help="write procedural clean/depth/hazy scenes and pairs.txt")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--count", type=_positive_int, default=20)
    s.add_argument("--size", type=parse_size, default=(128, 128))
    s.add_argument("--beta", type=_nonneg_float, default=synth.DEFAULT_BETA)
    s.add_argument("--airlight", type=parse_airlight, default=synth.DEFAULT_AIRLIGHT)

    s = sub.add_parser("synth", parents=[common], help="build a hazy patch dataset")
    s.add_argument("--input", required=True, type=Path, help="directory of clean images")
    s.add_argument("--depth", required=True, type=Path, help="directory of depth maps (same stems)")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--beta", type=_nonneg_float, default=synth.DEFAULT_BETA)
    s.add_argument("--airlight", type=parse_airlight, default=synth.DEFAULT_AIRLIGHT)
    s.add_argument("--patch", type=_positive_int, default=64)
    s.add_argument("--per-image", type=_positive_int, default=10)
    s.add_argument("--split", type=_open_ratio, default=0.8)

    s = sub.add_parser("train", parents=[common], help="train C2MSNet from a manifest")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--epochs", type=_positive_int, default=18)
    s.add_argument("--batch", type=_positive_int, default=64)
    s.add_argument("--lr", type=_positive_float, default=0.002)
    s.add_argument("--checkpoint", type=Path, default=Path("c2msnet.ckpt"))
    s.add_argument("--curve", type=Path, default=Path("curve.csv"))

    s = sub.add_parser("dehaze", parents=[common], help="dehaze one image")
    s.add_argument("--image", required=True, type=Path)
    s.add_argument("--method", choices=("net", "classical"), default="net")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--out-trans", type=Path)

    s = sub.add_parser("eval", parents=[common], help="SSIM / MSE / PSNR over image pairs")
    s.add_argument("--pairs", required=True, type=Path, help="pairs.txt or a directory")
    s.add_argument("--method", type=parse_methods, default=["classical"],
                   help="comma list of net, classical, none")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--report", required=True, type=Path)

    s = sub.add_parser("bench", parents=[common], help="per-image timing")
    s.add_argument("--method", type=parse_methods, default=["classical", "net"])
    s.add_argument("--size", type=parse_size, default=(100, 100))
    s.add_argument("--repeats", type=_repeats, default=10)
    s.add_argument("--checkpoint", type=Path, help="net weights (random init if omitted)")
    s.add_argument("--report", type=Path, help="optional CSV of timings")
    return p


def _haze_params(args, seed: int) -> synth.HazeParams:
    if args.airlight == "jitter":
        return synth.HazeParams(args.beta, synth.DEFAULT_AIRLIGHT, True, seed)
    return synth.HazeParams(args.beta, args.airlight, False, seed)


def _method_fn(method: str, params: net.NetworkParams | None):
    if method == "classical":
        return lambda img: classical.dehaze_classical(img)[0]
    if method == "net":
        return lambda img: net.dehaze_net(img, params)[0]
    return lambda img: img


def cmd_scenes(args, seed: int) -> int:
    rows = synth.write_scenes(args.out, args.count, *args.size, _haze_params(args, seed))
    print(f"wrote {len(rows)} scenes to {args.out}")
    return 0


def cmd_synth(args, seed: int) -> int:
    if not args.input.is_dir():
        print(f"error: {args.input}: not a directory", file=sys.stderr)
        return 1
    inputs = synth.scene_inputs(args.input, args.depth)
    if not inputs:
        print(f"error: no images in {args.input}", file=sys.stderr)
        return 1
    m = synth.build_manifest(inputs, _haze_params(args, seed), args.patch, args.per_image,
                             args.split, args.out)
    print(f"manifest {args.out / 'manifest.txt'}: {len(m.entries)} patches "
          f"({len(m.split('train'))} train, {len(m.split('val'))} val)")
    for path, reason in m.failures:
        print(f"failed: {path}: {reason}", file=sys.stderr)
    return 1 if m.failures else 0


def curve_csv(report: net.TrainReport) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_mse", "val_mse"])
    for epoch, t, v in report.curve_rows():
        w.writerow([epoch, repr(t), repr(v)])
    return buf.getvalue()


def cmd_train(args, seed: int) -> int:
    try:
        manifest = synth.DatasetManifest.read(args.manifest)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg = SGDConfig(args.lr, args.batch, args.epochs, seed)
    params, report = net.train(manifest, cfg)
    net.save_checkpoint(params, args.checkpoint)
    io.atomic_write_text(args.curve, curve_csv(report))
    print(f"trained {report.epochs_completed} epochs in {report.wall_time:.1f}s: "
          f"train_mse {report.initial_train_loss:.6f} -> {report.train_loss[-1]:.6f}, "
          f"val_mse {report.val_loss[-1]:.6f}")
    return 0


def _load_params(checkpoint: Path | None) -> net.NetworkParams:
    if checkpoint is None:
        raise ValueError("--checkpoint is required for --method net")
    return net.load_checkpoint(checkpoint)


def cmd_dehaze(args, seed: int, parser) -> int:
    if args.method == "net" and args.checkpoint is None:
        parser.error("--method net requires --checkpoint PATH (or use --method classical)")
    img = io.read_image(args.image)
    if args.method == "net":
        out, tr, air = net.dehaze_net(img, _load_params(args.checkpoint))
    else:
        out, tr, air = classical.dehaze_classical(img)
    io.write_image(args.out, out)
    if args.out_trans:
        io.write_image(args.out_trans, tr)
    print(f"wrote {args.out} (airlight {np.round(air, 4).tolist()})")
    return 0


def _report_path(base: Path, method: str, n_methods: int) -> Path:
    return base if n_methods == 1 else base.with_name(f"{base.stem}.{method}{base.suffix}")


def cmd_eval(args, seed: int, parser) -> int:
    if "net" in args.method and args.checkpoint is None:
        parser.error("--method net requires --checkpoint PATH")
    try:
        pairs = synth.read_pairs(args.pairs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    loaded = []
    for inp, truth in pairs:
        try:
            loaded.append((inp, io.read_image(inp), io.read_image(truth)))
        except OSError as exc:
            print(f"skipping pair: {exc}", file=sys.stderr)
    if not loaded:
        print(f"error: no valid pairs in {args.pairs}", file=sys.stderr)
        return 1
    params = _load_params(args.checkpoint) if "net" in args.method else None
    reports = []
    for method in args.method:
        fn = _method_fn(method, params)
        report = metrics.MetricReport(method=method)
        for path, img, truth in loaded:
            report.add(str(path), fn(img), truth)
        out = _report_path(args.report, method, len(args.method))
        io.atomic_write_text(out, report.to_csv())
        io.atomic_write_text(out.with_name(out.name + ".txt"), report.to_text())
        reports.append(report)
    print(f"{'method':<10} {'ssim':>8} {'mse':>10} {'psnr':>9}  ({len(loaded)} images)")
    for r in reports:
        m = r.means()
        print(f"{r.method:<10} {m['ssim']:8.4f} {m['mse']:10.6f} {m['psnr']:9.4f}")
    return 0


def cmd_bench(args, seed: int) -> int:
    h, w = args.size
    rng = np.random.default_rng(seed)
    images = [rng.random((h, w, 3))]
    params = None
    if "net" in args.method:
        params = (net.load_checkpoint(args.checkpoint) if args.checkpoint
                  else net.NetworkParams.init(seed))
    rows = []
    for method in args.method:
        res = metrics.bench_time(_method_fn(method, params), images, args.repeats)
        rows.append((method, res))
        print(f"{method:<10} {res.mean:.6f} s +- {res.std:.6f} s per {h}x{w}x3 image "
              f"({res.samples} runs)")
    if args.report:
        buf = _io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["method", "height", "width", "mean_s", "std_s", "runs"])
        for method, res in rows:
            wr.writerow([method, h, w, repr(res.mean), repr(res.std), res.samples])
        io.atomic_write_text(args.report, buf.getvalue())
    return 0


def _thread_limit():
    value = os.environ.get("DEHAZE_THREADS")
    if not value:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(value)))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    seed = args.seed if args.seed is not None else args.global_seed
    verbose = args.verbose or args.global_verbose
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _thread_limit()
    try:
        if args.command == "scenes":
            return cmd_scenes(args, seed)
        if args.command == "synth":
            return cmd_synth(args, seed)
        if args.command == "train":
            return cmd_train(args, seed)
        if args.command == "dehaze":
            return cmd_dehaze(args, seed, parser)
        if args.command == "eval":
            return cmd_eval(args, seed, parser)
        return cmd_bench(args, seed)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
