"""Slow reference implementations used only as test oracles.

Everything here is written with explicit loops and shares no code with the
package, so agreement is evidence rather than tautology.
"""

import math

import numpy as np


def conv_direct(x, kernel, bias):
    n_, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    out = np.zeros((n_, h, w, cout))
    for n in range(n_):
        for y in range(h):
            for xx in range(w):
                for o in range(cout):
                    acc = bias[o]
                    for dy in range(kh):
                        for dx in range(kw):
                            yy, xs = y + dy - kh // 2, xx + dx - kw // 2
                            if 0 <= yy < h and 0 <= xs < w:
                                for c in range(cin):
                                    acc += x[n, yy, xs, c] * kernel[dy, dx, c, o]
                    out[n, y, xx, o] = acc
    return out


def maxpool_direct(x, window):
    n_, h, w, c_ = x.shape
    r = window // 2
    out = np.empty_like(x)
    for n in range(n_):
        for y in range(h):
            for xx in range(w):
                for c in range(c_):
                    out[n, y, xx, c] = max(
                        x[n, yy, xs, c]
                        for yy in range(max(0, y - r), min(h, y + r + 1))
                        for xs in range(max(0, xx - r), min(w, xx + r + 1)))
    return out


def windowed_min(plane, patch):
    h, w = plane.shape
    r = patch // 2
    out = np.empty_like(plane)
    for y in range(h):
        for x in range(w):
            out[y, x] = min(plane[yy, xx]
                            for yy in range(max(0, y - r), min(h, y + r + 1))
                            for xx in range(max(0, x - r), min(w, x + r + 1)))
    return out


def dark_channel_direct(img, patch):
    h, w, _ = img.shape
    mins = np.array([[min(img[y, x, 0], img[y, x, 1], img[y, x, 2]) for x in range(w)]
                     for y in range(h)])
    return windowed_min(mins, patch)


def transmission_direct(img, air, eta, patch):
    h, w, _ = img.shape
    out = np.empty((h, w))
    r = patch // 2
    for y in range(h):
        for x in range(w):
            best = math.inf
            for c in range(3):
                for yy in range(max(0, y - r), min(h, y + r + 1)):
                    for xx in range(max(0, x - r), min(w, x + r + 1)):
                        best = min(best, img[yy, xx, c] / air[c])
            out[y, x] = min(1.0, max(0.0, 1.0 - eta * best))
    return out


def airlight_direct(img, dark, fraction):
    h, w, _ = img.shape
    k = max(1, math.ceil(round(fraction * h * w, 9)))
    ranked = sorted(((-dark[y, x], y * w + x) for y in range(h) for x in range(w)))[:k]
    picks = [img[i // w, i % w] for _, i in ranked]
    return np.array([sum(p[c] for p in picks) / k for c in range(3)])


def numeric_grad(f, arr, eps=1e-5, indices=None):
    """Central differences of scalar f() w.r.t. arr, perturbing arr in place."""
    grad = np.zeros_like(arr)
    idx_iter = indices if indices is not None else np.ndindex(arr.shape)
    for idx in idx_iter:
        old = arr[idx]
        arr[idx] = old + eps
        fp = f()
        arr[idx] = old - eps
        fm = f()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def rel_error(analytic, numeric, floor=1e-10):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def ssim_constant(mu_a, mu_b, c1=1e-4, c2=9e-4):
    """Single-window SSIM of two constant images (zero variance, zero covariance)."""
    return (2 * mu_a * mu_b + c1) * c2 / ((mu_a ** 2 + mu_b ** 2 + c1) * c2)
