"""Modulated deformable convolution and the two alignment variants built on it.

Offsets are stored per output pixel and per tap as ``(dx, dy)`` with shape
``(H, W, kh * kw, 2)``; taps run row-major over the kernel window, matching
``Kernel.weight[:, :, i, j]``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .flow import warp_backward
from .grid import DTYPE, Kernel, as_grid, conv2d, pixel_coords, sample_bilinear
from .weights import AlignmentWeights


def tap_grid(kh: int, kw: int) -> tuple[np.ndarray, np.ndarray]:
    """Regular (dx, dy) displacements of each tap, centred on the output pixel."""
    ii, jj = np.mgrid[0:kh, 0:kw]
    return (jj - (kw - 1) // 2).ravel().astype(DTYPE), (ii - (kh - 1) // 2).ravel().astype(DTYPE)


def dcn_forward(x: np.ndarray, offsets: np.ndarray, modulation: np.ndarray,
                k: Kernel) -> np.ndarray:
    """Modulated deformable convolution, stride 1, 'same' output size.

    Each tap samples ``x`` bilinearly (clamped to the frame) at
    ``p + base_tap + offset(p, tap)`` and is scaled by ``modulation(p, tap)``.
    A tap whose regular position ``p + base_tap`` falls outside the frame
    contributes zero, which reproduces zero-padded convolution when the offsets
    vanish.
    """
    x = as_grid(x)
    h, w, cin = x.shape
    kh, kw = k.size
    taps = kh * kw
    if k.in_channels != cin:
        raise ValueError(f"kernel expects {k.in_channels} channels, feature has {cin}")
    offsets = np.asarray(offsets, dtype=DTYPE)
    modulation = np.asarray(modulation, dtype=DTYPE)
    if offsets.shape != (h, w, taps, 2):
        raise ValueError(f"offsets must have shape {(h, w, taps, 2)}, got {offsets.shape}")
    if modulation.shape != (h, w, taps):
        raise ValueError(f"modulation must have shape {(h, w, taps)}, got {modulation.shape}")

    bx, by = tap_grid(kh, kw)
    xs, ys = pixel_coords(h, w)
    base_x = xs[..., None] + bx
    base_y = ys[..., None] + by
    inside = (base_x >= 0) & (base_x <= w - 1) & (base_y >= 0) & (base_y <= h - 1)
    cols = sample_bilinear(x, base_x + offsets[..., 0], base_y + offsets[..., 1])
    cols = cols * (modulation * inside)[..., None]          # (H, W, taps, Cin)
    weight = k.weight.reshape(k.out_channels, cin, taps)
    out = np.tensordot(cols, weight, axes=([2, 3], [2, 1]))
    if k.bias is not None:
        out = out + k.bias
    return out


def _conv_same(g, k: Kernel) -> np.ndarray:
    return conv2d(g, k, stride=1, padding=(k.size[0] - 1) // 2)


def relu(a):
    return np.maximum(a, 0.0)


def predict_offsets(cond: np.ndarray, w: AlignmentWeights) -> tuple[np.ndarray, np.ndarray]:
    """Run the offset network; returns ``(offsets, modulation)`` for a 3x3 DCN."""
    h = cond
    for i, layer in enumerate(w.offset_net):
        h = _conv_same(h, layer)
        if i < len(w.offset_net) - 1:
            h = relu(h)
    taps = w.dcn.size[0] * w.dcn.size[1]
    if h.shape[2] != 3 * taps:
        raise ValueError(f"offset net emits {h.shape[2]} channels, expected {3 * taps}")
    offsets = h[..., : 2 * taps].reshape(h.shape[0], h.shape[1], taps, 2)
    modulation = expit(h[..., 2 * taps:])
    return offsets, modulation


def fuse(aligned: np.ndarray, current: np.ndarray, w: AlignmentWeights) -> np.ndarray:
    """Fusion block: a 1x1 linear path plus a two-layer 3x3 residual branch."""
    both = np.concatenate([aligned, current], axis=-1)
    branch = _conv_same(relu(_conv_same(both, w.fuse_conv1)), w.fuse_conv2)
    return conv2d(both, w.fuse_skip) + branch


def align_plain(f_t: np.ndarray, prop_next: np.ndarray, w: AlignmentWeights) -> np.ndarray:
    """Deformable alignment with offsets learned from ``concat(f_t, prop_next)``."""
    f_t = as_grid(f_t)
    prop_next = as_grid(prop_next)
    if f_t.shape != prop_next.shape:
        raise ValueError(f"feature shapes differ: {f_t.shape} vs {prop_next.shape}")
    offsets, modulation = predict_offsets(np.concatenate([f_t, prop_next], axis=-1), w)
    aligned = dcn_forward(prop_next, offsets, modulation, w.dcn)
    return fuse(aligned, f_t, w)


def align_flow_guided(e_t, prop_next, flow_ds, valid, m_orig, m_updated,
                      w: AlignmentWeights) -> np.ndarray:
    """Flow-guided deformable alignment.

    The offset network sees the current feature, the flow-warped propagation
    feature, the flow itself, the flow valid map and both masks; it predicts a
    residue that is added to the flow to form each tap's offset.
    """
    e_t = as_grid(e_t)
    prop_next = as_grid(prop_next)
    flow_ds = np.asarray(flow_ds, dtype=DTYPE)
    hw = e_t.shape[:2]
    maps = [np.asarray(a, dtype=DTYPE) for a in (valid, m_orig, m_updated)]
    if prop_next.shape != e_t.shape or flow_ds.shape != hw + (2,) or any(
            m.shape != hw for m in maps):
        raise ValueError("flow-guided alignment inputs must share the feature resolution")
    warped = warp_backward(prop_next, flow_ds)
    cond = np.concatenate([e_t, warped, flow_ds] + [m[..., None] for m in maps], axis=-1)
    residue, modulation = predict_offsets(cond, w)
    aligned = dcn_forward(prop_next, flow_ds[:, :, None, :] + residue, modulation, w.dcn)
    return fuse(aligned, e_t, w)
