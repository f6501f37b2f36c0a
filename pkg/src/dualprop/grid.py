"""Dense-grid primitives: bilinear sampling, convolution and resizing.

Grids are numpy arrays laid out ``(height, width, channels)``.  Two-dimensional
arrays (masks) are accepted wherever a single channel makes sense and are
returned with the same dimensionality.  Flow fields store ``(dx, dy)`` in the
last axis, the same order as Middlebury ``.flo`` files.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

DTYPE = np.float64


@dataclass
class Kernel:
    """Convolution weights of shape ``(out_channels, in_channels, kh, kw)``."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        if self.weight.ndim != 4:
            raise ValueError(f"kernel weight must be 4-D, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(-1)
            if self.bias.shape[0] != self.weight.shape[0]:
                raise ValueError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @classmethod
    def identity(cls, channels: int) -> "Kernel":
        return cls(np.eye(channels)[:, :, None, None], np.zeros(channels))


def as_grid(g) -> np.ndarray:
    g = np.asarray(g, dtype=DTYPE)
    if g.ndim == 2:
        return g[:, :, None]
    if g.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, C) grid, got shape {g.shape}")
    return g


def sample_bilinear(g: np.ndarray, xs, ys) -> np.ndarray:
    """Vectorised bilinear lookup with clamp-to-edge borders.

    ``xs`` and ``ys`` may have any (matching) shape; the result has that shape
    plus the channel axis of ``g``.
    """
    g = as_grid(g)
    h, w = g.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=DTYPE), 0.0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=DTYPE), 0.0, h - 1)
    xs, ys = np.broadcast_arrays(xs, ys)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    dx = (x0 < w - 1).astype(np.intp)
    dy = (y0 < h - 1) * w
    ax = (xs - x0)[..., None]
    ay = (ys - y0)[..., None]
    flat = g.reshape(h * w, -1)
    i00 = y0 * w + x0
    v00 = np.take(flat, i00, axis=0)
    v01 = np.take(flat, i00 + dx, axis=0)
    v10 = np.take(flat, i00 + dy, axis=0)
    v11 = np.take(flat, i00 + dy + dx, axis=0)
    # lerp form: a zero weight returns the corner value bit-exactly
    top = v00 + ax * (v01 - v00)
    bottom = v10 + ax * (v11 - v10)
    return top + ay * (bottom - top)


def bilinear_sample(g: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample every channel of ``g`` at the real position ``(x, y)``."""
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("sample coordinates must be finite")
    return sample_bilinear(g, np.array(x), np.array(y))


def pixel_coords(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(DTYPE), ys.astype(DTYPE)


def conv2d(g: np.ndarray, k: Kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding.

    Output size along each axis is ``(n + 2 * padding - k) // stride + 1``.
    """
    g = as_grid(g)
    if g.shape[2] != k.in_channels:
        raise ValueError(
            f"kernel expects {k.in_channels} input channels, grid has {g.shape[2]}")
    kh, kw = k.size
    if padding:
        g = np.pad(g, ((padding, padding), (padding, padding), (0, 0)))
    h, w = g.shape[:2]
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(g, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # (Ho, Wo, Cin, kh, kw)
    out = np.tensordot(windows, k.weight, axes=([2, 3, 4], [1, 2, 3]))
    if k.bias is not None:
        out = out + k.bias
    return out


def _output_size(n: int, factor: Fraction) -> int:
    size = int(n * factor)
    if size <= 0:
        raise ValueError(f"resize of {n} by {factor} gives a non-positive size")
    return size


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # row i averages the input interval [i * n_in / n_out, (i + 1) * n_in / n_out)
    scale = n_in / n_out
    lo = np.arange(n_out) * scale
    hi = lo + scale
    left = np.arange(n_in)
    overlap = np.clip(np.minimum(hi[:, None], left + 1) - np.maximum(lo[:, None], left), 0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resize(g: np.ndarray, factor, mode: str = "bilinear") -> np.ndarray:
    """Rescale the spatial axes of ``g`` by a rational ``factor``.

    ``nearest`` maps output pixel ``i`` to input pixel ``floor(i / factor)``
    (top-left convention) and is the only mode to use for masks.  ``bilinear``
    uses half-pixel centres with clamped borders; ``area`` averages the input
    footprint of each output pixel.
    """
    factor = Fraction(factor).limit_denominator(1 << 16)
    if factor <= 0:
        raise ValueError("resize factor must be positive")
    squeeze = np.ndim(g) == 2
    src = np.asarray(g)
    h, w = src.shape[:2]
    ho, wo = _output_size(h, factor), _output_size(w, factor)

    if mode == "nearest":
        rows = np.minimum(np.arange(ho) * factor.denominator // factor.numerator, h - 1)
        cols = np.minimum(np.arange(wo) * factor.denominator // factor.numerator, w - 1)
        return src[rows][:, cols]

    src = as_grid(src)
    if mode == "bilinear":
        ys = (np.arange(ho) + 0.5) * (h / ho) - 0.5
        xs = (np.arange(wo) + 0.5) * (w / wo) - 0.5
        out = sample_bilinear(src, xs[None, :], ys[:, None])
    elif mode == "area":
        ry = _area_matrix(h, ho)
        rx = _area_matrix(w, wo)
        out = np.einsum("ih,hwc,jw->ijc", ry, src, rx)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return out[:, :, 0] if squeeze else out


def resize_flow(f: np.ndarray, factor) -> np.ndarray:
    """Resample a flow field and rescale its displacements by ``factor``."""
    f = np.asarray(f, dtype=DTYPE)
    if f.ndim != 3 or f.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {f.shape}")
    factor = Fraction(factor).limit_denominator(1 << 16)
    out = resize(f, factor, mode="bilinear")
    return out * factor.numerator / factor.denominator
