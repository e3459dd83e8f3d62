"""C2MSNet: cardinal colour fusion stage followed by a multi-scale stage.

Stage 1 convolves R, G and B separately with 3x3x1x32 banks and keeps the
per-filter maximum over the three colour responses (32 maps). Stage 2 runs
3x3, 5x5 and 7x7 banks of 16 filters, concatenates them to 48 maps, max-pools
over 7x7 windows, applies one 5x5x48 filter and clamps with a BiReLU.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical, io
from .nn import (BiReLU, Conv2D, SGDConfig, ShapeError, birelu_backward, birelu_forward,
                 channel_group_max, channel_group_max_backward, concat_channels,
                 conv2d_backward, conv2d_forward, maxpool_spatial_backward,
                 maxpool_spatial_forward, mse_loss, sgd_step, split_channels)
from .synth import DatasetManifest

log = logging.getLogger(__name__)

STAGE1_FILTERS = 32
MS_SIZES = (3, 5, 7)
MS_FILTERS = 16
POOL_WINDOW = 7
FINAL_SIZE = 5
CONCAT_CHANNELS = MS_FILTERS * len(MS_SIZES)
COLORS = ("r", "g", "b")

CHECKPOINT_MAGIC = b"C2MSNET\n"
CHECKPOINT_VERSION = 1


def expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for c in COLORS:
        shapes[f"stage1.{c}.kernel"] = (3, 3, 1, STAGE1_FILTERS)
        shapes[f"stage1.{c}.bias"] = (STAGE1_FILTERS,)
    for k in MS_SIZES:
        shapes[f"ms{k}.kernel"] = (k, k, STAGE1_FILTERS, MS_FILTERS)
        shapes[f"ms{k}.bias"] = (MS_FILTERS,)
    shapes["final.kernel"] = (FINAL_SIZE, FINAL_SIZE, CONCAT_CHANNELS, 1)
    shapes["final.bias"] = (1,)
    return shapes


@dataclass
class NetworkParams:
    stage1: tuple[Conv2D, Conv2D, Conv2D]
    stage2_ms: tuple[Conv2D, Conv2D, Conv2D]
    stage2_final: Conv2D
    birelu: BiReLU = field(default_factory=BiReLU)

    def __post_init__(self):
        self.stage1 = tuple(self.stage1)
        self.stage2_ms = tuple(self.stage2_ms)
        if len(self.stage1) != 3 or len(self.stage2_ms) != 3:
            raise ShapeError("need three stage-1 layers and three multi-scale layers")
        shapes = expected_shapes()
        for name, arr in self.arrays().items():
            if arr.shape != shapes[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @classmethod
    def init(cls, seed: int = 0, birelu: BiReLU | None = None) -> "NetworkParams":
        """Glorot-uniform kernels and zero biases, except the output bias.

        The output bias starts at the middle of the BiReLU range. With a zero
        bias the initial outputs of some seeds all fall below t_min, where the
        clamp passes no gradient and training never starts.
        """
        birelu = birelu or BiReLU()
        rng = np.random.default_rng(seed)
        stage1 = tuple(Conv2D.init(3, 3, 1, STAGE1_FILTERS, rng) for _ in COLORS)
        ms = tuple(Conv2D.init(k, k, STAGE1_FILTERS, MS_FILTERS, rng) for k in MS_SIZES)
        final = Conv2D.init(FINAL_SIZE, FINAL_SIZE, CONCAT_CHANNELS, 1, rng)
        final.bias[:] = 0.5 * (birelu.t_min + birelu.t_max)
        return cls(stage1, ms, final, birelu)

    def layers(self) -> dict[str, Conv2D]:
        named = {f"stage1.{c}": layer for c, layer in zip(COLORS, self.stage1)}
        named.update({f"ms{k}": layer for k, layer in zip(MS_SIZES, self.stage2_ms)})
        named["final"] = self.stage2_final
        return named

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers().items():
            out[f"{name}.kernel"] = layer.kernel
            out[f"{name}.bias"] = layer.bias
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray],
                    birelu: BiReLU | None = None) -> "NetworkParams":
        missing = set(expected_shapes()) - set(arrays)
        if missing:
            raise ShapeError(f"missing parameter arrays: {sorted(missing)}")

        def conv(name):
            return Conv2D(arrays[f"{name}.kernel"], arrays[f"{name}.bias"])

        return cls(tuple(conv(f"stage1.{c}") for c in COLORS),
                   tuple(conv(f"ms{k}") for k in MS_SIZES),
                   conv("final"), birelu or BiReLU())

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "NetworkParams":
        return NetworkParams.from_arrays(arrays, self.birelu)


def _as_batch(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[3] != 3:
        raise ShapeError(f"expected a 3-channel image or batch, got shape {img.shape}")
    return img


def forward_stage1(img: np.ndarray, params: NetworkParams) -> np.ndarray:
    """(H, W, 3) or (N, H, W, 3) -> (N, H, W, 32)."""
    return _stage1(_as_batch(img), params)[0]


def _stage1(x, params):
    psi = [conv2d_forward(x[..., i:i + 1], layer) for i, layer in enumerate(params.stage1)]
    return channel_group_max(*psi), psi


def forward_stage2(features: np.ndarray, params: NetworkParams) -> np.ndarray:
    """(N, H, W, 32) -> (N, H, W, 1) transmission, clamped to the BiReLU range."""
    return _stage2(features, params)[0]


def _stage2(feat, params):
    if feat.ndim != 4 or feat.shape[3] != STAGE1_FILTERS:
        raise ShapeError(f"stage 2 expects {STAGE1_FILTERS} input channels, got shape {feat.shape}")
    ms = [conv2d_forward(feat, layer) for layer in params.stage2_ms]
    cat = concat_channels(ms)
    pooled, pool_idx = maxpool_spatial_forward(cat, POOL_WINDOW, 1)
    pre = conv2d_forward(pooled, params.stage2_final)
    out = birelu_forward(pre, params.birelu)
    return out, dict(cat=cat, pooled=pooled, pool_idx=pool_idx, pre=pre)


def forward(x: np.ndarray, params: NetworkParams) -> tuple[np.ndarray, dict]:
    """Full network on a batch, returning output and the cache for backward()."""
    x = _as_batch(x)
    feat, psi = _stage1(x, params)
    out, cache = _stage2(feat, params)
    cache.update(x=x, psi=psi, feat=feat)
    return out, cache


def backward(params: NetworkParams, cache: dict, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    g = birelu_backward(cache["pre"], params.birelu, grad_out)
    g, grads["final.kernel"], grads["final.bias"] = conv2d_backward(
        cache["pooled"], params.stage2_final, g)
    g = maxpool_spatial_backward(cache["pool_idx"], g)
    g_feat = np.zeros_like(cache["feat"])
    for k, layer, g_ms in zip(MS_SIZES, params.stage2_ms, split_channels(g, [MS_FILTERS] * 3)):
        gi, grads[f"ms{k}.kernel"], grads[f"ms{k}.bias"] = conv2d_backward(cache["feat"], layer, g_ms)
        g_feat += gi
    x = cache["x"]
    for i, (c, layer, g_psi) in enumerate(zip(COLORS, params.stage1,
                                              channel_group_max_backward(*cache["psi"], g_feat))):
        _, grads[f"stage1.{c}.kernel"], grads[f"stage1.{c}.bias"] = conv2d_backward(
            x[..., i:i + 1], layer, g_psi)
    return grads


def predict_transmission(img: np.ndarray, params: NetworkParams) -> np.ndarray:
    """(H, W, 3) image -> (H, W) transmission map. Any image size works."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got shape {img.shape}")
    out, _ = forward(img, params)
    return out[0, ..., 0]


def dehaze_net(img: np.ndarray, params: NetworkParams,
               fraction: float = classical.AIRLIGHT_FRACTION,
               patch_size: int = classical.PATCH_SIZE,
               t_floor: float = classical.T_FLOOR):
    """Network transmission + dark-channel airlight. Returns (recovered, tr, airlight)."""
    img = classical.check_rgb(img)
    tr = predict_transmission(img, params)
    air = classical.estimate_airlight(img, classical.dark_channel(img, patch_size), fraction)
    return classical.recover_scene(img, tr, air, t_floor), tr, air


# -- training ----------------------------------------------------------------

def loss_and_grads(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                   chunk: int = 16) -> tuple[float, dict[str, np.ndarray]]:
    """MSE over the whole batch and its gradient, evaluated chunk by chunk."""
    total = y.size
    loss = 0.0
    grads: dict[str, np.ndarray] | None = None
    for s in range(0, len(x), chunk):
        out, cache = forward(x[s:s + chunk], params)
        part, g = mse_loss(out, y[s:s + chunk])
        w = g.size / total
        loss += part * w
        cg = backward(params, cache, g * w)
        if grads is None:
            grads = cg
        else:
            for name in grads:
                grads[name] += cg[name]
    return loss, grads


def evaluate_loss(params: NetworkParams, x: np.ndarray, y: np.ndarray, chunk: int = 16) -> float:
    if len(x) == 0:
        return float("nan")
    sse = 0.0
    for s in range(0, len(x), chunk):
        out, _ = forward(x[s:s + chunk], params)
        d = out - y[s:s + chunk]
        sse += float(np.sum(d * d))
    return sse / y.size


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    epochs_completed: int = 0
    wall_time: float = 0.0

    def curve_rows(self) -> list[tuple[int, float, float]]:
        return [(i + 1, t, v) for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]


def train_arrays(train_x: np.ndarray, train_y: np.ndarray, val_x: np.ndarray, val_y: np.ndarray,
                 cfg: SGDConfig, params: NetworkParams | None = None,
                 chunk: int = 16) -> tuple[NetworkParams, TrainReport]:
    """Mini-batch SGD on in-memory patches.

    Per-epoch train loss is the sample-weighted mean of the mini-batch losses
    seen during that epoch; validation loss is measured after the epoch.
    """
    if len(train_x) == 0:
        raise ValueError("no training patches")
    start = time.perf_counter()
    params = params or NetworkParams.init(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainReport(initial_train_loss=evaluate_loss(params, train_x, train_y, chunk),
                         initial_val_loss=evaluate_loss(params, val_x, val_y, chunk))
    n = len(train_x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        seen = 0.0
        for b, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(params, train_x[idx], train_y[idx], chunk)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            params = params.with_arrays(sgd_step(params.arrays(), grads, cfg))
            seen += loss * len(idx)
        report.train_loss.append(seen / n)
        report.val_loss.append(evaluate_loss(params, val_x, val_y, chunk))
        report.epochs_completed = epoch + 1
        log.info("epoch %d/%d train_mse %.6f val_mse %.6f", epoch + 1, cfg.epochs,
                 report.train_loss[-1], report.val_loss[-1])
    report.wall_time = time.perf_counter() - start
    return params, report


def train(manifest: DatasetManifest, cfg: SGDConfig, chunk: int = 16
          ) -> tuple[NetworkParams, TrainReport]:
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    train_x, train_y = manifest.load("train")
    val_x, val_y = manifest.load("val")
    return train_arrays(train_x, train_y, val_x, val_y, cfg, chunk=chunk)


# -- checkpoints -------------------------------------------------------------
# Layout: magic line, one line of JSON header, then every array listed in the
# header as raw little-endian float64, in header order.

def checkpoint_bytes(params: NetworkParams) -> bytes:
    arrays = params.arrays()
    header = {
        "format": "c2msnet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "birelu": [params.birelu.t_min, params.birelu.t_max],
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body


def save_checkpoint(params: NetworkParams, path: str | os.PathLike) -> None:
    io.atomic_write_bytes(path, checkpoint_bytes(params))


def load_checkpoint(path: str | os.PathLike) -> NetworkParams:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a C2MSNet checkpoint")
    head_end = data.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(data[len(CHECKPOINT_MAGIC):head_end])
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    shapes = expected_shapes()
    arrays, offset = {}, head_end + 1
    for spec in header["arrays"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if shapes.get(name) != shape:
            raise ShapeError(f"{path}: {name} has shape {shape}, expected {shapes.get(name)}")
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(data):
            raise ValueError(f"{path}: truncated at {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8,
                                     offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    t_min, t_max = header["birelu"]
    return NetworkParams.from_arrays(arrays, BiReLU(t_min, t_max))
