"""Synthetic haze: depth -> transmission -> hazy image, and patch datasets on disk."""

from __future__ import annotations

import colorsys
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from . import io

log = logging.getLogger(__name__)

DEFAULT_BETA = 1.0
DEFAULT_AIRLIGHT = (0.8, 0.8, 0.8)
JITTER_RANGE = (0.7, 1.0)
MANIFEST_HEADER = "# dehaze-manifest v1"
SPLIT_TAG = 0x5EED  # extra entropy word for the train/val shuffle


@dataclass(frozen=True)
class HazeParams:
    """beta is the scattering coefficient per unit of normalised depth.

    With jitter=True each image draws a grey airlight uniformly from JITTER_RANGE
    instead of using ``airlight``.
    """

    beta: float = DEFAULT_BETA
    airlight: tuple[float, float, float] = DEFAULT_AIRLIGHT
    jitter: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if len(self.airlight) != 3 or not all(0 < a <= 1 for a in self.airlight):
            raise ValueError(f"airlight components must lie in (0, 1], got {self.airlight}")


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Scale depth into [0, 1] by its maximum; zero depth stays zero."""
    depth = np.asarray(depth, dtype=np.float64)
    peak = depth.max() if depth.size else 0.0
    return depth / peak if peak > 0 else np.zeros_like(depth)


def transmission_from_depth(depth: np.ndarray, beta: float = DEFAULT_BETA) -> np.ndarray:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise ValueError("depth must be finite and non-negative")
    return np.exp(-beta * depth)


def synthesize_hazy(clean: np.ndarray, tr: np.ndarray, air) -> np.ndarray:
    """I = R * t + A * (1 - t), per channel."""
    clean = np.asarray(clean, dtype=np.float64)
    air = np.asarray(air, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {clean.shape}")
    if tr.shape != clean.shape[:2]:
        raise ValueError(f"transmission shape {tr.shape} != image shape {clean.shape[:2]}")
    t = tr[..., None]
    return clean * t + air * (1.0 - t)


def patch_corners(height: int, width: int, patch: int, count: int,
                  seed) -> list[tuple[int, int]]:
    if patch > min(height, width):
        raise ValueError(f"patch {patch} larger than image {height}x{width}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, height - patch + 1, size=count)
    xs = rng.integers(0, width - patch + 1, size=count)
    return [(int(y), int(x)) for y, x in zip(ys, xs)]


def extract_patches(hazy: np.ndarray, tr: np.ndarray, patch: int = 64, count: int = 1,
                    seed=0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Aligned random crops of a hazy image and its transmission map."""
    if hazy.shape[:2] != tr.shape:
        raise ValueError(f"hazy shape {hazy.shape} and transmission shape {tr.shape} disagree")
    corners = patch_corners(tr.shape[0], tr.shape[1], patch, count, seed)
    return [(hazy[y:y + patch, x:x + patch], tr[y:y + patch, x:x + patch]) for y, x in corners]


# -- procedural scenes -------------------------------------------------------

def _smooth_noise(h: int, w: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    grid = rng.random((cells + 1, cells + 1))
    return cv2.resize(grid, (w, h), interpolation=cv2.INTER_LINEAR)


def _saturated_color(rng: np.random.Generator) -> np.ndarray:
    h = rng.random()
    s = rng.uniform(0.6, 1.0)
    v = rng.uniform(0.25, 0.95)
    return np.array(colorsys.hsv_to_rgb(h, s, v))


def random_scene(height: int, width: int, rng: np.random.Generator,
                 n_objects: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """A haze-free RGB scene with a matching depth map, both in [0, 1].

    Ground recedes towards the top of the frame; objects are textured,
    saturated rectangles and ellipses standing at nearer depths, some with
    shadows. Saturated colours keep the dark channel of the clean scene low.
    """
    yy, xx = np.mgrid[0:height, 0:width] / max(height - 1, 1)
    xx = xx * (height - 1) / max(width - 1, 1)
    tilt = rng.uniform(-0.3, 0.3)
    depth = np.clip(1.0 - yy + tilt * (xx - 0.5), 0.0, None) * rng.uniform(0.7, 1.0) + 0.05
    ground = _saturated_color(rng)
    img = ground * (0.6 + 0.4 * _smooth_noise(height, width, 6, rng))[..., None]
    for _ in range(n_objects):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.08, 0.3) * height
        rx = rng.uniform(0.08, 0.3) * width
        if rng.random() < 0.5:
            mask = (np.abs(np.arange(height)[:, None] - cy) < ry) & \
                   (np.abs(np.arange(width)[None, :] - cx) < rx)
        else:
            mask = ((np.arange(height)[:, None] - cy) / ry) ** 2 + \
                   ((np.arange(width)[None, :] - cx) / rx) ** 2 < 1.0
        base_depth = depth[min(int(cy + ry), height - 1), min(int(cx), width - 1)]
        obj_depth = base_depth * rng.uniform(0.3, 1.0)
        depth = np.where(mask, np.minimum(depth, obj_depth), depth)
        texture = 0.55 + 0.45 * _smooth_noise(height, width, 12, rng)
        color = _saturated_color(rng)[None, None, :] * texture[..., None]
        if rng.random() < 0.4:
            color = color * np.where(yy > cy / max(height - 1, 1), 0.35, 1.0)[..., None]
        img = np.where(mask[..., None], color, img)
    return np.clip(img, 0.0, 1.0), normalize_depth(depth)


def hazy_from_depth(clean: np.ndarray, depth: np.ndarray, params: HazeParams,
                    air=None) -> tuple[np.ndarray, np.ndarray]:
    """Hazy image and the 16-bit-representable transmission it was made from."""
    tr = io.dequantize(io.quantize(transmission_from_depth(normalize_depth(depth), params.beta)))
    return synthesize_hazy(clean, tr, params.airlight if air is None else air), tr


# -- datasets on disk --------------------------------------------------------

@dataclass
class ManifestEntry:
    split: str
    hazy_path: str
    transmission_path: str
    airlight: tuple[float, float, float]
    # provenance, kept in memory only
    source: str | None = None
    corner: tuple[int, int] | None = None

    def to_line(self) -> str:
        a = "\t".join(repr(float(v)) for v in self.airlight)
        return f"{self.split}\t{self.hazy_path}\t{self.transmission_path}\t{a}"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    patch_size: int = 64
    root: Path = field(default_factory=Path)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER, f"# patch_size {self.patch_size}"]
        lines += [f"# failed\t{p}\t{reason}" for p, reason in self.failures]
        lines += [e.to_line() for e in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        io.atomic_write_text(path, self.to_text())

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"{path}: cannot read manifest ({exc.strerror})") from None
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ValueError(f"{path}: not a dehaze manifest")
        patch_size, entries, failures = 64, [], []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("# patch_size"):
                patch_size = int(line.split()[2])
            elif line.startswith("# failed\t"):
                _, p, reason = line.split("\t", 2)
                failures.append((p, reason))
            elif line.startswith("#"):
                continue
            else:
                parts = line.split("\t")
                if len(parts) != 6 or parts[0] not in ("train", "val"):
                    raise ValueError(f"{path}:{n}: malformed record")
                air = tuple(float(v) for v in parts[3:])
                entries.append(ManifestEntry(parts[0], parts[1], parts[2], air))
        return cls(entries, patch_size, path.parent, failures)

    def validate(self) -> None:
        """Check every file exists and decodes at patch size; splits are disjoint."""
        train = {(e.hazy_path, e.transmission_path) for e in self.split("train")}
        val = {(e.hazy_path, e.transmission_path) for e in self.split("val")}
        if train & val:
            raise ValueError("train and val splits share entries")
        p = self.patch_size
        for e in self.entries:
            hazy = io.read_image(self.resolve(e.hazy_path))
            tr = io.read_gray(self.resolve(e.transmission_path))
            if hazy.shape != (p, p, 3) or tr.shape != (p, p):
                raise ValueError(f"{e.hazy_path}: patch shapes {hazy.shape}, {tr.shape} != {p}x{p}")

    def load(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Stack a split into (N, P, P, 3) hazy and (N, P, P, 1) transmission arrays."""
        entries = self.split(split)
        p = self.patch_size
        hazy = np.empty((len(entries), p, p, 3))
        tr = np.empty((len(entries), p, p, 1))
        for i, e in enumerate(entries):
            hazy[i] = io.read_image(self.resolve(e.hazy_path))
            tr[i, ..., 0] = io.read_gray(self.resolve(e.transmission_path))
        return hazy, tr


def build_manifest(inputs: Sequence[tuple[str | os.PathLike, str | os.PathLike]],
                   params: HazeParams, patch: int = 64, per_image: int = 10,
                   split_ratio: float = 0.8, out_dir: str | os.PathLike = "dataset"
                   ) -> DatasetManifest:
    """Hazy patch dataset from (clean image, depth map) pairs.

    Writes patches under ``out_dir/patches`` and ``out_dir/manifest.txt``.
    Inputs that cannot be read are skipped and listed as failures.
    """
    if not 0 < split_ratio < 1:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    if per_image < 1:
        raise ValueError(f"per_image must be >= 1, got {per_image}")
    out_dir = Path(out_dir)
    entries: list[ManifestEntry] = []
    failures: list[tuple[str, str]] = []
    for i, (clean_path, depth_path) in enumerate(inputs):
        rng = np.random.default_rng([params.seed, i])
        try:
            clean = io.read_image(clean_path)
            depth = io.read_depth(depth_path)
            if depth.shape != clean.shape[:2]:
                raise ValueError(f"depth {depth.shape} and image {clean.shape[:2]} sizes differ")
            if patch > min(depth.shape):
                raise ValueError(f"patch {patch} larger than image {depth.shape}")
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", clean_path, exc)
            failures.append((str(clean_path), str(exc)))
            continue
        if params.jitter:
            air = (float(rng.uniform(*JITTER_RANGE)),) * 3
        else:
            air = tuple(float(a) for a in params.airlight)
        hazy, tr = hazy_from_depth(clean, depth, params, air)
        stem = Path(clean_path).stem
        for j, (y, x) in enumerate(patch_corners(*tr.shape, patch, per_image, rng)):
            name = f"{i:04d}_{stem}_{j:04d}_y{y}_x{x}"
            hazy_rel = f"patches/{name}_hazy.png"
            tr_rel = f"patches/{name}_trans.png"
            io.write_image(out_dir / hazy_rel, hazy[y:y + patch, x:x + patch])
            io.write_image(out_dir / tr_rel, tr[y:y + patch, x:x + patch])
            entries.append(ManifestEntry("train", hazy_rel, tr_rel, air,
                                         source=str(clean_path), corner=(y, x)))
    order = np.random.default_rng([params.seed, SPLIT_TAG]).permutation(len(entries))
    n_train = int(round(split_ratio * len(entries)))
    for rank, idx in enumerate(order):
        entries[idx].split = "train" if rank < n_train else "val"
    manifest = DatasetManifest(entries, patch, out_dir, failures)
    manifest.write(out_dir / "manifest.txt")
    return manifest


def write_scenes(out_dir: str | os.PathLike, count: int, height: int, width: int,
                 params: HazeParams) -> list[tuple[Path, Path, Path]]:
    """Procedural (clean, depth, hazy) triples plus a ``pairs.txt`` of hazy/clean paths."""
    out_dir = Path(out_dir)
    rows = []
    for i in range(count):
        rng = np.random.default_rng([params.seed, i])
        clean, depth = random_scene(height, width, rng)
        # store what was actually written so downstream reads agree bit-for-bit
        clean = io.dequantize(io.quantize(clean))
        depth = io.dequantize(io.quantize(depth))
        if params.jitter:
            air = (float(rng.uniform(*JITTER_RANGE)),) * 3
        else:
            air = params.airlight
        hazy, _ = hazy_from_depth(clean, depth, params, air)
        paths = (out_dir / "clean" / f"scene{i:04d}.png",
                 out_dir / "depth" / f"scene{i:04d}.png",
                 out_dir / "hazy" / f"scene{i:04d}.png")
        for path, arr in zip(paths, (clean, depth, hazy)):
            io.write_image(path, arr)
        rows.append(paths)
    pairs = "".join(f"hazy/{h.name}\tclean/{c.name}\n" for c, _, h in rows)
    io.atomic_write_text(out_dir / "pairs.txt", pairs)
    return rows


def read_pairs(path: str | os.PathLike) -> list[tuple[Path, Path]]:
    """(input, ground truth) pairs from a pairs file or a directory.

    A directory is searched for ``pairs.txt`` first, then for ``hazy/`` and
    ``clean/`` subdirectories matched by file name.
    """
    path = Path(path)
    if path.is_dir():
        if (path / "pairs.txt").is_file():
            return read_pairs(path / "pairs.txt")
        hazy_dir, clean_dir = path / "hazy", path / "clean"
        if not hazy_dir.is_dir() or not clean_dir.is_dir():
            raise FileNotFoundError(f"{path}: no pairs.txt and no hazy/ + clean/ subdirectories")
        return [(h, clean_dir / h.name) for h in sorted(hazy_dir.iterdir())
                if (clean_dir / h.name).is_file()]
    pairs = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        a, b = line.split("\t")[:2]
        pairs.append((path.parent / a, path.parent / b))
    return pairs


def scene_inputs(clean_dir: str | os.PathLike, depth_dir: str | os.PathLike
                 ) -> list[tuple[Path, Path]]:
    """Pair every image in clean_dir with the depth file of the same stem."""
    clean_dir, depth_dir = Path(clean_dir), Path(depth_dir)
    pairs = []
    for clean in sorted(p for p in clean_dir.iterdir() if p.is_file()):
        candidates = sorted(depth_dir.glob(clean.stem + ".*")) if depth_dir.is_dir() else []
        pairs.append((clean, candidates[0] if candidates else depth_dir / (clean.stem + ".png")))
    return pairs


