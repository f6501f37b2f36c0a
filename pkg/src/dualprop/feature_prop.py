"""Local feature-domain propagation: stride-4 frame encoder, bidirectional
flow-guided deformable propagation and the frame decoder."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .align import align_flow_guided, relu
from .flow import DEFAULT_EPSILON, consistency_error, valid_map
from .grid import DTYPE, Kernel, as_grid, conv2d, resize, resize_flow
from .weights import DecoderWeights, EncoderWeights, FeaturePropWeights

FEATURE_STRIDE = 4


def run_encoder(x: np.ndarray, enc: EncoderWeights) -> np.ndarray:
    h = as_grid(x)
    last = len(enc.layers) - 1
    for i, (k, s) in enumerate(zip(enc.layers, enc.strides)):
        h = conv2d(h, k, stride=s, padding=(k.size[0] - 1) // 2)
        if i < last:
            h = relu(h)
    return h


def run_decoder(x: np.ndarray, dec: DecoderWeights) -> np.ndarray:
    h = as_grid(x)
    last = len(dec.layers) - 1
    for i, k in enumerate(dec.layers):
        h = resize(h, 2, mode="bilinear")
        h = conv2d(h, k, stride=1, padding=(k.size[0] - 1) // 2)
        if i < last:
            h = relu(h)
    return h


def encode_frames(frames: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                  w: EncoderWeights) -> np.ndarray:
    """Encode each frame together with its (updated) mask as a fourth channel."""
    out = []
    for frame, mask in zip(frames, masks, strict=True):
        frame = as_grid(frame)
        h, wd = frame.shape[:2]
        if h % FEATURE_STRIDE or wd % FEATURE_STRIDE:
            raise ValueError(f"frame dims {h}x{wd} are not divisible by {FEATURE_STRIDE}")
        x = np.concatenate([frame, np.asarray(mask, dtype=DTYPE)[..., None]], axis=-1)
        out.append(run_encoder(x, w))
    return np.stack(out)


def decode_features(feat: np.ndarray, w: DecoderWeights) -> np.ndarray:
    """Decode every frame's features to RGB in [0, 1]."""
    frames = []
    for f in feat:
        rgb = run_decoder(f, w)
        if rgb.shape[2] != 3:
            raise ValueError(f"decoder produced {rgb.shape[2]} channels, expected 3")
        frames.append(np.clip(rgb, 0.0, 1.0))
    return np.stack(frames)


def bidirectional(feats: np.ndarray, step_backward: Callable, step_forward: Callable,
                  fuse: Kernel) -> np.ndarray:
    """Recurrent backward then forward pass, fused per frame by a 1x1 convolution.

    ``step_backward(t, prop_next)`` returns the propagation feature of frame
    ``t`` from that of ``t + 1``; ``step_forward(t, prop_prev)`` likewise from
    ``t - 1``.  The end frames of each pass keep their own features.
    """
    n = len(feats)
    if n < 2:
        raise ValueError("bidirectional propagation needs at least two frames")
    back = [None] * n
    back[n - 1] = feats[n - 1]
    for t in range(n - 2, -1, -1):
        back[t] = step_backward(t, back[t + 1])
    fwd = [None] * n
    fwd[0] = feats[0]
    for t in range(1, n):
        fwd[t] = step_forward(t, fwd[t - 1])
    return np.stack([conv2d(np.concatenate([b, f], axis=-1), fuse)
                     for b, f in zip(back, fwd)])


def downsample_conditions(flows_fwd, flows_bwd, masks, masks_updated,
                          factor=FEATURE_STRIDE, epsilon: float = DEFAULT_EPSILON) -> dict:
    """Bring flows, valid maps and masks to feature resolution.

    ``flows_fwd[t]`` maps frame ``t`` to ``t + 1`` and ``flows_bwd[t]`` maps
    frame ``t + 1`` to ``t``.  Valid maps are computed at full resolution and
    downsampled with nearest sampling, as are the masks.
    """
    scale = 1 / factor
    down = lambda m: resize(np.asarray(m, dtype=DTYPE), scale, mode="nearest")
    out = {
        "flows_fwd": [resize_flow(f, scale) for f in flows_fwd],
        "flows_bwd": [resize_flow(f, scale) for f in flows_bwd],
        "valid_fwd": [down(valid_map(consistency_error(f, b), epsilon))
                      for f, b in zip(flows_fwd, flows_bwd)],
        "valid_bwd": [down(valid_map(consistency_error(b, f), epsilon))
                      for f, b in zip(flows_fwd, flows_bwd)],
        "masks": [down(m) for m in masks],
        "masks_updated": [down(m) for m in masks_updated],
    }
    return out


def feature_propagate_bidir(e: np.ndarray, flows_fwd, flows_bwd, valid_fwd, valid_bwd,
                            masks, masks_updated, w: FeaturePropWeights) -> np.ndarray:
    """Bidirectional flow-guided propagation over a clip of encoded features.

    All inputs are at feature resolution.  ``valid_fwd[t]`` validates
    ``flows_fwd[t]`` on frame ``t``; ``valid_bwd[t]`` validates
    ``flows_bwd[t]`` on frame ``t + 1``.
    """
    e = np.asarray(e, dtype=DTYPE)
    n = len(e)
    for name, seq, want in (("flows_fwd", flows_fwd, n - 1), ("flows_bwd", flows_bwd, n - 1),
                            ("valid_fwd", valid_fwd, n - 1), ("valid_bwd", valid_bwd, n - 1),
                            ("masks", masks, n), ("masks_updated", masks_updated, n)):
        if len(seq) != want:
            raise ValueError(f"{name} has {len(seq)} entries, expected {want}")

    def step_backward(t, prop_next):
        return align_flow_guided(e[t], prop_next, flows_fwd[t], valid_fwd[t],
                                 masks[t], masks_updated[t], w.backward)

    def step_forward(t, prop_prev):
        return align_flow_guided(e[t], prop_prev, flows_bwd[t - 1], valid_bwd[t - 1],
                                 masks[t], masks_updated[t], w.forward)

    return bidirectional(e, step_backward, step_forward, w.fuse)
