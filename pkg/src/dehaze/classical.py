"""Dark channel prior dehazing: dark channel, airlight, transmission, recovery.

Images are (H, W, 3) float arrays in [0, 1]; transmission maps are (H, W).
Min-filter windows are clamped to the image, so border pixels only see
in-image neighbours.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import minimum_filter

PATCH_SIZE = 15
AIRLIGHT_FRACTION = 0.001
ETA = 0.95
T_FLOOR = 0.1


def check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image is empty")
    return img


def _check_patch(patch_size: int) -> None:
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {patch_size}")


def min_filter(plane: np.ndarray, patch_size: int) -> np.ndarray:
    """Windowed minimum with the window clamped to the image bounds."""
    _check_patch(patch_size)
    # edge replication never lowers a clamped-window minimum, so "nearest" is exact
    return minimum_filter(plane, size=patch_size, mode="nearest")


def dark_channel(img: np.ndarray, patch_size: int = PATCH_SIZE) -> np.ndarray:
    img = check_rgb(img)
    _check_patch(patch_size)
    return min_filter(img.min(axis=2), patch_size)


def n_brightest(n_pixels: int, fraction: float) -> int:
    # guard against fraction * n landing a hair above an integer
    return max(1, math.ceil(round(fraction * n_pixels, 9)))


def estimate_airlight(img: np.ndarray, dark: np.ndarray,
                      fraction: float = AIRLIGHT_FRACTION) -> np.ndarray:
    """Mean colour of the hazy image over the brightest dark-channel pixels.

    Ties in the dark channel are broken by row-major pixel order.
    """
    img = check_rgb(img)
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if dark.shape != img.shape[:2]:
        raise ValueError(f"dark channel shape {dark.shape} != image shape {img.shape[:2]}")
    k = n_brightest(dark.size, fraction)
    order = np.argsort(-dark.ravel(), kind="stable")[:k]
    return img.reshape(-1, 3)[order].mean(axis=0)


def estimate_transmission(img: np.ndarray, air: np.ndarray, eta: float = ETA,
                          patch_size: int = PATCH_SIZE) -> np.ndarray:
    img = check_rgb(img)
    air = np.asarray(air, dtype=np.float64)
    if air.shape != (3,):
        raise ValueError(f"airlight must have 3 components, got {air.shape}")
    if np.any(air <= 0):
        raise ValueError(f"airlight components must be positive, got {air}")
    if not 0 < eta <= 1:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    ratio = (img / air).min(axis=2)
    return np.clip(1.0 - eta * min_filter(ratio, patch_size), 0.0, 1.0)


def recover_scene(img: np.ndarray, tr: np.ndarray, air: np.ndarray,
                  t_floor: float = T_FLOOR, clip: bool = True) -> np.ndarray:
    """Invert I = R*t + A*(1 - t) with t bounded below by t_floor."""
    img = check_rgb(img)
    air = np.asarray(air, dtype=np.float64)
    if tr.shape != img.shape[:2]:
        raise ValueError(f"transmission shape {tr.shape} != image shape {img.shape[:2]}")
    if not 0 < t_floor < 1:
        raise ValueError(f"t_floor must be in (0, 1), got {t_floor}")
    t = np.maximum(tr, t_floor)[..., None]
    out = (img - air) / t + air
    return np.clip(out, 0.0, 1.0) if clip else out


def dehaze_classical(img: np.ndarray, patch_size: int = PATCH_SIZE,
                     fraction: float = AIRLIGHT_FRACTION, eta: float = ETA,
                     t_floor: float = T_FLOOR):
    """Full dark-channel pipeline. Returns (recovered, transmission, airlight)."""
    img = check_rgb(img)
    dark = dark_channel(img, patch_size)
    air = estimate_airlight(img, dark, fraction)
    tr = estimate_transmission(img, air, eta, patch_size)
    return recover_scene(img, tr, air, t_floor), tr, air
