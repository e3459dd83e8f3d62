"""Desk-scale training run: procedural scenes -> patches -> C2MSNet -> held-out PSNR/SSIM.

    python scripts/desk_training.py --out runs/desk --epochs 10

Writes the dataset, checkpoint, ``curve.csv`` and ``heldout.csv`` under ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _io
from pathlib import Path

from dehaze import classical, io, metrics, net, synth
from dehaze.nn import SGDConfig
from dehaze.synth import HazeParams


@dataclasses.dataclass(frozen=True)
class DeskConfig:
    scenes: int = 25
    scene_size: int = 128
    patch: int = 64
    per_image: int = 10
    split: float = 0.8
    held_out: int = 10
    beta: float = 1.0
    airlight: float = 0.8
    epochs: int = 10
    batch: int = 64
    lr: float = 0.002
    seed: int = 0


def run(cfg: DeskConfig, out: Path) -> None:
    haze = HazeParams(beta=cfg.beta, airlight=(cfg.airlight,) * 3, seed=cfg.seed)
    synth.write_scenes(out / "scenes", cfg.scenes, cfg.scene_size, cfg.scene_size, haze)
    inputs = synth.scene_inputs(out / "scenes" / "clean", out / "scenes" / "depth")
    manifest = synth.build_manifest(inputs, haze, cfg.patch, cfg.per_image, cfg.split, out / "ds")
    print(f"{len(manifest.split('train'))} train / {len(manifest.split('val'))} val patches")

    sgd = SGDConfig(learning_rate=cfg.lr, batch_size=cfg.batch, epochs=cfg.epochs, seed=cfg.seed)
    params, report = net.train(manifest, sgd)
    net.save_checkpoint(params, out / "c2msnet.ckpt")
    print(f"epoch 0: train {report.initial_train_loss:.5f} val {report.initial_val_loss:.5f}")
    for epoch, tr, va in report.curve_rows():
        print(f"epoch {epoch}: train {tr:.5f} val {va:.5f}")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_mse", "val_mse"])
    w.writerows(report.curve_rows())
    io.atomic_write_text(out / "curve.csv", buf.getvalue())

    held = dataclasses.replace(haze, seed=cfg.seed + 1_000)
    synth.write_scenes(out / "held", cfg.held_out, cfg.scene_size, cfg.scene_size, held)
    rows = [["image", "psnr_hazy", "psnr_net", "psnr_classical", "ssim_hazy", "ssim_net",
             "ssim_classical"]]
    for hazy_path, clean_path in synth.read_pairs(out / "held"):
        hazy, clean = io.read_image(hazy_path), io.read_image(clean_path)
        outs = [hazy, net.dehaze_net(hazy, params)[0], classical.dehaze_classical(hazy)[0]]
        rows.append([hazy_path.name] + [metrics.psnr(o, clean) for o in outs]
                    + [metrics.ssim(o, clean) for o in outs])
    buf = _io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    io.atomic_write_text(out / "heldout.csv", buf.getvalue())
    wins = sum(r[2] > r[1] for r in rows[1:])
    print(f"net beats hazy PSNR on {wins}/{len(rows) - 1} held-out images ({report.wall_time:.0f}s training)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    for field in dataclasses.fields(DeskConfig):
        ap.add_argument(f"--{field.name.replace('_', '-')}", type=type(field.default),
                        default=field.default)
    args = vars(ap.parse_args())
    out = args.pop("out")
    run(DeskConfig(**args), out)


if __name__ == "__main__":
    main()
