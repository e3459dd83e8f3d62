"""Image quality metrics (MSE, PSNR, SSIM) and per-image timing."""

from __future__ import annotations

import csv
import io as _io
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse_image(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for unit-range images; inf when identical."""
    err = mse_image(a, b)
    return math.inf if err == 0 else 10.0 * math.log10(1.0 / err)


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array(LUMA_WEIGHTS)
    raise ValueError(f"expected a gray or RGB image, got shape {img.shape}")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    y = correlate1d(correlate1d(x, k, axis=0, mode="constant"), k, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig = SSIMConfig()) -> np.ndarray:
    a, b = _check_pair(to_luma(a), to_luma(b))
    if min(a.shape) < cfg.window:
        raise ValueError(f"image {a.shape} smaller than the {cfg.window}x{cfg.window} SSIM window")
    k = gaussian_kernel(cfg.window, cfg.sigma)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, cfg: SSIMConfig = SSIMConfig()) -> float:
    """Mean SSIM over all full windows of the luma images."""
    return float(np.mean(ssim_map(a, b, cfg)))


@dataclass
class MetricRow:
    path: str
    ssim: float
    mse: float
    psnr: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    method: str = ""
    ssim_config: SSIMConfig = field(default_factory=SSIMConfig)

    def add(self, path: str, output: np.ndarray, truth: np.ndarray) -> MetricRow:
        row = MetricRow(path, ssim(output, truth, self.ssim_config),
                        mse_image(output, truth), psnr(output, truth))
        self.rows.append(row)
        return row

    def means(self) -> dict[str, float]:
        if not self.rows:
            return {"ssim": math.nan, "mse": math.nan, "psnr": math.nan}
        return {k: float(np.mean([getattr(r, k) for r in self.rows]))
                for k in ("ssim", "mse", "psnr")}

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "ssim", "mse", "psnr"])
        for r in self.rows:
            w.writerow([r.path, repr(r.ssim), repr(r.mse), repr(r.psnr)])
        return buf.getvalue()

    def to_text(self) -> str:
        c = self.ssim_config
        m = self.means()
        lines = [f"method {self.method}",
                 f"ssim_window {c.window} sigma {c.sigma} k1 {c.k1} k2 {c.k2} luma {LUMA_WEIGHTS}",
                 f"images {len(self.rows)}"]
        lines += [f"{r.path}  ssim {r.ssim:.4f}  mse {r.mse:.6f}  psnr {r.psnr:.4f}" for r in self.rows]
        lines.append(f"mean  ssim {m['ssim']:.4f}  mse {m['mse']:.6f}  psnr {m['psnr']:.4f}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BenchResult:
    mean: float
    std: float
    samples: int


def bench_time(method: Callable[[np.ndarray], object], images: Sequence[np.ndarray],
               repeats: int = 10) -> BenchResult:
    """Wall-clock seconds per image, over ``repeats`` passes through ``images``.

    One untimed call per image runs first so lazy imports and cold caches stay out of
    the samples.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    if not images:
        raise ValueError("no images to time")
    for img in images:
        method(img)
    times = []
    for _ in range(repeats):
        for img in images:
            t0 = time.perf_counter()
            method(img)
            times.append(time.perf_counter() - t0)
    return BenchResult(statistics.fmean(times), statistics.stdev(times), len(times))
