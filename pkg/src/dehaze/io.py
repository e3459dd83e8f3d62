"""Lossless raster IO and atomic file writes.

Colour images are exchanged as RGB float arrays in [0, 1]. Files are PNG
(8- or 16-bit on read, 16-bit on write by default).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import cv2
import numpy as np

TEXT_GRID_SUFFIXES = {".txt", ".csv", ".tsv", ".dat"}


class ImageReadError(OSError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _decode(path: Path) -> np.ndarray:
    if not path.is_file():
        raise ImageReadError(f"{path}: no such file")
    buf = np.fromfile(path, dtype=np.uint8)
    raw = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"{path}: cannot decode image")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageReadError(f"{path}: unsupported sample type {raw.dtype}")
    return raw.astype(np.float64) / scale


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an RGB image as (H, W, 3) floats in [0, 1]. Gray inputs are replicated."""
    arr = _decode(Path(path))
    if arr.ndim == 2:
        return np.repeat(arr[..., None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[..., :3]
    if arr.shape[2] != 3:
        raise ImageReadError(f"{path}: expected 1, 3 or 4 channels, got {arr.shape[2]}")
    return np.ascontiguousarray(arr[..., ::-1])


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel raster as (H, W) floats in [0, 1]."""
    arr = _decode(Path(path))
    if arr.ndim != 2:
        raise ImageReadError(f"{path}: expected a single-channel image, got shape {arr.shape}")
    return arr


def read_depth(path: str | os.PathLike) -> np.ndarray:
    """Depth from a single-channel raster or a whitespace/comma separated text grid."""
    path = Path(path)
    if path.suffix.lower() in TEXT_GRID_SUFFIXES:
        if not path.is_file():
            raise ImageReadError(f"{path}: no such file")
        try:
            text = path.read_text().replace(",", " ")
            depth = np.array([[float(v) for v in line.split()]
                              for line in text.splitlines() if line.strip()])
        except ValueError as exc:
            raise ImageReadError(f"{path}: bad depth grid ({exc})") from None
        if depth.ndim != 2:
            raise ImageReadError(f"{path}: depth grid rows have unequal lengths")
    else:
        depth = read_gray(path)
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ImageReadError(f"{path}: depth must be finite and non-negative")
    return depth


def quantize(arr: np.ndarray, bits: int = 16) -> np.ndarray:
    peak = (1 << bits) - 1
    dtype = np.uint16 if bits == 16 else np.uint8
    return np.rint(np.clip(arr, 0.0, 1.0) * peak).astype(dtype)


def dequantize(q: np.ndarray) -> np.ndarray:
    peak = 65535.0 if q.dtype == np.uint16 else 255.0
    return q.astype(np.float64) / peak


def encode_png(arr: np.ndarray, bits: int = 16) -> bytes:
    q = quantize(arr, bits)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[..., ::-1])
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise OSError("PNG encoding failed")
    return buf.tobytes()


def write_image(path: str | os.PathLike, arr: np.ndarray, bits: int = 16) -> None:
    """Write an (H, W) or (H, W, 3) RGB float array as PNG, atomically."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"cannot write image of shape {arr.shape}")
    atomic_write_bytes(path, encode_png(arr, bits))
