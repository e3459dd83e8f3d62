"""Small numpy layer library with explicit forward and backward passes.

Activations are float64 arrays laid out as (batch, height, width, channels).
Every spatial op is stride 1 and keeps height and width unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes do not fit together."""


def _check_nhwc(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, H, W, C), got shape {x.shape}")


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv2D:
    """Same-padded stride-1 convolution. kernel is (kH, kW, inC, outC)."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-D (kH, kW, inC, outC), got {self.kernel.shape}")
        kh, kw, _, cout = self.kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel spatial size must be odd, got {kh}x{kw}")
        if self.bias.shape != (cout,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match outC={cout}")

    @classmethod
    def init(cls, kh: int, kw: int, cin: int, cout: int,
             rng: np.random.Generator) -> "Conv2D":
        kernel = glorot_uniform((kh, kw, cin, cout), kh * kw * cin, kh * kw * cout, rng)
        return cls(kernel, np.zeros(cout))

    @property
    def padding(self) -> tuple[int, int]:
        return self.kernel.shape[0] // 2, self.kernel.shape[1] // 2

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[3]


def _pad_hw(x: np.ndarray, ph: int, pw: int, value: float = 0.0) -> np.ndarray:
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), constant_values=value)


def conv2d_forward(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    _check_nhwc(x)
    if x.shape[3] != layer.in_channels:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[3]} channels but kernel shape "
            f"{layer.kernel.shape} expects {layer.in_channels}")
    n, h, w, _ = x.shape
    kh, kw, _, cout = layer.kernel.shape
    ph, pw = layer.padding
    xp = _pad_hw(x, ph, pw)
    out = np.empty((n, h, w, cout))
    out[...] = layer.bias
    # one GEMM per kernel tap over a shifted view of the padded input
    for dy in range(kh):
        for dx in range(kw):
            out += xp[:, dy:dy + h, dx:dx + w, :] @ layer.kernel[dy, dx]
    return out


def conv2d_backward(x: np.ndarray, layer: Conv2D, grad_out: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (grad_input, grad_kernel, grad_bias) for conv2d_forward(x, layer)."""
    _check_nhwc(x)
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = layer.kernel.shape
    if cin != kcin:
        raise ShapeError(f"input shape {x.shape} does not match kernel shape {layer.kernel.shape}")
    if grad_out.shape != (n, h, w, cout):
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {(n, h, w, cout)}")
    ph, pw = layer.padding
    xp = _pad_hw(x, ph, pw)
    g2 = grad_out.reshape(-1, cout)
    grad_k = np.empty_like(layer.kernel)
    for dy in range(kh):
        for dx in range(kw):
            grad_k[dy, dx] = xp[:, dy:dy + h, dx:dx + w, :].reshape(-1, cin).T @ g2
    # input gradient is a same-padded conv of grad_out with the flipped, transposed kernel
    flipped = Conv2D(layer.kernel[::-1, ::-1].transpose(0, 1, 3, 2), np.zeros(cin))
    return conv2d_forward(grad_out, flipped), grad_k, g2.sum(axis=0)


@dataclass(frozen=True)
class PoolIndex:
    """Argmax record of a separable max pool.

    col_offsets[n, y, x, c] is the winning dx of the row window at (y, x);
    row_offsets[n, y, x, c] is the winning dy of the output at (y, x).
    """

    row_offsets: np.ndarray
    col_offsets: np.ndarray
    window: int

    def winners(self) -> np.ndarray:
        """Winning input position per output as a row-major offset dy * window + dx."""
        h = self.row_offsets.shape[1]
        r = self.window // 2
        rows = np.arange(h)[None, :, None, None] + self.row_offsets - r
        dx = np.take_along_axis(self.col_offsets, rows, axis=1)
        return self.row_offsets.astype(np.int64) * self.window + dx


def _running_max(xp: np.ndarray, window: int, axis: int, size: int):
    def view(k):
        sl = [slice(None)] * 4
        sl[axis] = slice(k, k + size)
        return xp[tuple(sl)]

    best = view(0).copy()
    for k in range(1, window):
        np.maximum(best, view(k), out=best)
    # walk offsets backwards so the smallest matching offset is written last
    arg = np.full(best.shape, window - 1, dtype=np.int8)
    for k in range(window - 2, -1, -1):
        np.copyto(arg, k, where=view(k) == best)
    return best, arg


def maxpool_spatial_forward(x: np.ndarray, window: int = 7, stride: int = 1
                            ) -> tuple[np.ndarray, PoolIndex]:
    """Centered max pooling; positions outside the image do not take part.

    Done as a row pass then a column pass. Ties go to the first position in
    row-major window order.
    """
    _check_nhwc(x)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"pooling window must be odd and positive, got {window}")
    if stride != 1:
        raise ValueError(f"only stride 1 is supported, got {stride}")
    _, h, w, _ = x.shape
    r = window // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (0, 0)), constant_values=-np.inf)
    row_max, col_arg = _running_max(xp, window, 2, w)
    rp = np.pad(row_max, ((0, 0), (r, r), (0, 0), (0, 0)), constant_values=-np.inf)
    out, row_arg = _running_max(rp, window, 1, h)
    return out, PoolIndex(row_arg, col_arg, window)


def maxpool_spatial_backward(index: PoolIndex, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != index.row_offsets.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {index.row_offsets.shape}")
    n, h, w, c = grad_out.shape
    r = index.window // 2
    g_rows = np.zeros((n, h + 2 * r, w, c))
    for k in range(index.window):
        g_rows[:, k:k + h] += np.where(index.row_offsets == k, grad_out, 0.0)
    g_rows = g_rows[:, r:r + h]
    g_in = np.zeros((n, h, w + 2 * r, c))
    for k in range(index.window):
        g_in[:, :, k:k + w] += np.where(index.col_offsets == k, g_rows, 0.0)
    return g_in[:, :, r:r + w]


def _check_same(arrays: Sequence[np.ndarray]) -> None:
    shapes = [a.shape for a in arrays]
    if any(s != shapes[0] for s in shapes):
        raise ShapeError(f"inputs must share one shape, got {shapes}")


def channel_group_max(r: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-filter max over the three colour branches: out[..., k] = max(r, g, b)[..., k]."""
    _check_same((r, g, b))
    return np.maximum(np.maximum(r, g), b)


def channel_group_max_backward(r: np.ndarray, g: np.ndarray, b: np.ndarray,
                               grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _check_same((r, g, b, grad_out))
    winner = np.argmax(np.stack((r, g, b)), axis=0)  # first branch wins ties
    return tuple(np.where(winner == i, grad_out, 0.0) for i in range(3))


def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if not inputs:
        raise ShapeError("concat_channels needs at least one input")
    for a in inputs:
        _check_nhwc(a)
    lead = {a.shape[:3] for a in inputs}
    if len(lead) != 1:
        raise ShapeError(f"inputs disagree on (N, H, W): {[a.shape for a in inputs]}")
    return np.concatenate(inputs, axis=3)


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    if sum(sizes) != x.shape[3]:
        raise ShapeError(f"channel sizes {list(sizes)} do not sum to {x.shape[3]}")
    return np.split(x, np.cumsum(sizes)[:-1], axis=3)


@dataclass(frozen=True)
class BiReLU:
    """Bounded ReLU: identity on [t_min, t_max], clamped outside."""

    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ValueError(f"BiReLU needs t_min < t_max, got {self.t_min}, {self.t_max}")


def birelu_forward(x: np.ndarray, act: BiReLU) -> np.ndarray:
    return np.clip(x, act.t_min, act.t_max)


def birelu_backward(x: np.ndarray, act: BiReLU, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kinks themselves
    inside = (x > act.t_min) & (x < act.t_max)
    return np.where(inside, grad_out, 0.0)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    m = diff.size
    return float(np.mean(diff * diff)), (2.0 / m) * diff


@dataclass(frozen=True)
class SGDConfig:
    learning_rate: float = 0.002
    batch_size: int = 64
    epochs: int = 18
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             cfg: SGDConfig) -> dict[str, np.ndarray]:
    """Plain SGD: p - lr * g for every named array. Returns new arrays."""
    if set(params) != set(grads):
        raise KeyError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        out[name] = p - cfg.learning_rate * g
    return out
