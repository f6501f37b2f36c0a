"""Flow-centric operations: backward warping, forward-backward consistency,
validity maps and flow error measures."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .grid import DTYPE, as_grid, pixel_coords, sample_bilinear

DEFAULT_EPSILON = 5.0


def _check_flow(flow, shape=None) -> np.ndarray:
    flow = np.asarray(flow, dtype=DTYPE)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {flow.shape}")
    if shape is not None and flow.shape[:2] != tuple(shape[:2]):
        raise ValueError(f"flow dims {flow.shape[:2]} do not match grid dims {tuple(shape[:2])}")
    return flow


def warp_backward(src: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Sample ``src`` at ``p + flow(p)`` for every pixel ``p``."""
    squeeze = np.ndim(src) == 2
    src = as_grid(src)
    flow = _check_flow(flow, src.shape)
    xs, ys = pixel_coords(*src.shape[:2])
    out = sample_bilinear(src, xs + flow[..., 0], ys + flow[..., 1])
    return out[..., 0] if squeeze else out


def in_frame(flow: np.ndarray) -> np.ndarray:
    """True where ``p + flow(p)`` lands inside the frame."""
    flow = _check_flow(flow)
    h, w = flow.shape[:2]
    xs, ys = pixel_coords(h, w)
    tx = xs + flow[..., 0]
    ty = ys + flow[..., 1]
    return (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)


def consistency_error(f_fwd: np.ndarray, f_bwd: np.ndarray) -> np.ndarray:
    """Squared forward-backward residual ``|f(p) + b(p + f(p))|^2`` per pixel."""
    f_fwd = _check_flow(f_fwd)
    f_bwd = _check_flow(f_bwd, f_fwd.shape)
    residual = f_fwd + warp_backward(f_bwd, f_fwd)
    return np.sum(residual * residual, axis=-1)


def valid_map(error: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.asarray(error) < epsilon


def endpoint_error(f_hat: np.ndarray, f_gt: np.ndarray,
                   region: Optional[np.ndarray] = None) -> float:
    """Mean Euclidean distance between two flow fields, optionally over a region."""
    f_hat = _check_flow(f_hat)
    f_gt = _check_flow(f_gt, f_hat.shape)
    dist = np.sqrt(np.sum((f_hat - f_gt) ** 2, axis=-1))
    if region is None:
        return float(dist.mean())
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("endpoint_error region is empty")
    return float(dist[region].mean())


def warping_error(frames: Sequence[np.ndarray], flows: Sequence[np.ndarray],
                  flows_bwd: Optional[Sequence[np.ndarray]] = None,
                  epsilon: float = DEFAULT_EPSILON,
                  exclude_occluded: bool = True) -> float:
    """Flow warping error of a frame sequence.

    For each consecutive pair the squared colour difference between frame
    ``t`` and frame ``t + 1`` warped back by ``flows[t]`` is averaged over the
    pixels whose warp target lies inside the frame.  When backward flows are
    given and ``exclude_occluded`` is set, pixels failing the consistency
    check are excluded as well.  The result is the mean over pairs, in raw
    units (multiply by 1e3 for the customary reporting scale).
    """
    if len(flows) != len(frames) - 1:
        raise ValueError(f"need {len(frames) - 1} flows for {len(frames)} frames, got {len(flows)}")
    if flows_bwd is not None and len(flows_bwd) != len(flows):
        raise ValueError("forward and backward flow lists differ in length")
    per_pair = []
    for t, flow in enumerate(flows):
        cur = as_grid(frames[t])
        warped = warp_backward(frames[t + 1], flow)
        diff = np.sum((cur - as_grid(warped)) ** 2, axis=-1)
        keep = in_frame(flow)
        if flows_bwd is not None and exclude_occluded:
            keep &= valid_map(consistency_error(flow, flows_bwd[t]), epsilon)
        per_pair.append(diff[keep].mean() if keep.any() else 0.0)
    return float(np.mean(per_pair)) if per_pair else 0.0


def flow_rec_loss(f_hat: np.ndarray, f_gt: np.ndarray, mask: np.ndarray) -> float:
    """L1 flow error normalised separately inside and outside the mask."""
    f_hat = _check_flow(f_hat)
    f_gt = _check_flow(f_gt, f_hat.shape)
    m = np.asarray(mask, dtype=DTYPE)[..., None]
    inside = m.sum()
    outside = (1.0 - m).sum()
    if inside == 0 or outside == 0:
        raise ValueError("flow_rec_loss needs a mask with both masked and unmasked pixels")
    err = np.abs(f_hat - f_gt)
    return float((m * err).sum() / inside + ((1.0 - m) * err).sum() / outside)


def laplacian(f: np.ndarray) -> np.ndarray:
    """5-point discrete Laplacian over interior pixels, per channel."""
    f = as_grid(f)
    return (f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:]
            - 4.0 * f[1:-1, 1:-1])


def flow_smooth_loss(f: np.ndarray) -> float:
    """Mean absolute second-order response of a flow field (interior pixels)."""
    f = _check_flow(f)
    if f.shape[0] < 3 or f.shape[1] < 3:
        raise ValueError("flow_smooth_loss needs at least a 3x3 field")
    return float(np.abs(laplacian(f)).mean())
