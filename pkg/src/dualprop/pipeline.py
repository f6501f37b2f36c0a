"""End-to-end inpainting: flow completion, image propagation, then either a
Laplacian fill of the leftover holes or the learned feature branch."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .completion import complete_flows_laplacian, laplace_fill, rfc_forward
from .config import PipelineConfig
from .cost import CostConfig, block_flops
from .feature_prop import (FEATURE_STRIDE, decode_features, downsample_conditions,
                           encode_frames, feature_propagate_bidir)
from .grid import DTYPE, resize
from .image_prop import propagate_global
from .msvt import MsvtConfig, msvt_block_forward, sparse_query_mask
from .weights import WeightShapeError, flatten, init_inpaint, init_rfc, load_into

RFC_PREFIX = "rfc"
INPAINT_PREFIX = "inpaint"


def inpaint_template(cfg: PipelineConfig, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return init_inpaint(rng, cfg.channels, cfg.token_channels, cfg.num_blocks,
                        cfg.split_kernel, cfg.heads)


def rfc_template(cfg: PipelineConfig, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return init_rfc(rng, cfg.flow_channels)


def random_archive(cfg: PipelineConfig, with_rfc: bool = True, seed=None) -> dict:
    """A complete, randomly initialised weight archive for ``cfg``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    arrays = flatten(inpaint_template(cfg, rng), INPAINT_PREFIX)
    if with_rfc:
        arrays.update(flatten(rfc_template(cfg, rng), RFC_PREFIX))
    return arrays


def _has_prefix(arrays: dict, prefix: str) -> bool:
    return any(name.startswith(prefix + ".") for name in arrays)


def msvt_config(cfg: PipelineConfig) -> MsvtConfig:
    return MsvtConfig(kernel=cfg.split_kernel, stride=cfg.split_stride, window=cfg.window,
                      expand=cfg.expand, global_tokens=cfg.global_tokens,
                      kv_stride=cfg.kv_stride, mask_mode=cfg.mask_mode)


def _check_inputs(frames, masks, flows_fwd, flows_bwd):
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"frames must have shape (T, H, W, 3), got {frames.shape}")
    n, h, w = frames.shape[:3]
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != (n, h, w):
        raise ValueError(f"masks {masks.shape} do not match frames {(n, h, w)}")
    if flows_fwd is None or flows_bwd is None:
        raise ValueError("forward and backward flows are required")
    flows_fwd = np.asarray(flows_fwd, dtype=DTYPE)
    flows_bwd = np.asarray(flows_bwd, dtype=DTYPE)
    for name, f in (("forward", flows_fwd), ("backward", flows_bwd)):
        if f.shape != (n - 1, h, w, 2):
            raise ValueError(f"{name} flows {f.shape} do not match, expected {(n - 1, h, w, 2)}")
    return frames, masks, flows_fwd, flows_bwd


def complete_flows(flows_fwd, flows_bwd, masks, rfc=None):
    """Complete both flow directions.  ``flows_fwd[t]`` lives on frame ``t``
    and ``flows_bwd[t]`` on frame ``t + 1``, so each uses that frame's mask."""
    if rfc is not None and len(flows_fwd) >= 2:
        return (np.stack(rfc_forward(list(flows_fwd), list(masks[:-1]), rfc)),
                np.stack(rfc_forward(list(flows_bwd), list(masks[1:]), rfc)))
    cache = {}
    return (np.stack(complete_flows_laplacian(list(flows_fwd), list(masks[:-1]), cache)),
            np.stack(complete_flows_laplacian(list(flows_bwd), list(masks[1:]), cache)))


def laplacian_fill_frames(frames, masks) -> np.ndarray:
    """Fill the remaining holes of each frame by harmonic interpolation.

    A frame with no known pixel copies the nearest frame that has some; if
    nothing is known anywhere the holes are set to mid-grey.
    """
    out = np.array(frames, dtype=DTYPE)
    known = [not m.all() for m in masks]
    cache = {}
    for t, m in enumerate(masks):
        if not m.any():
            continue
        if known[t]:
            out[t] = laplace_fill(out[t], m, cache)
    for t, m in enumerate(masks):
        if known[t]:
            continue
        donors = [s for s in range(len(masks)) if known[s]]
        if donors:
            s = min(donors, key=lambda s: (abs(s - t), s))
            out[t] = out[s]
        else:
            out[t] = 0.5
    return out


def clip_ranges(n: int, clip: int) -> list:
    """Overlapping ``[start, stop)`` clips with stride ``clip // 2`` covering ``n`` frames."""
    if n <= clip:
        return [(0, n)]
    stride = max(clip // 2, 1)
    starts = list(range(0, n - clip + 1, stride))
    if starts[-1] + clip < n:
        starts.append(n - clip)
    return [(s, s + clip) for s in starts]


def _blend_weights(start: int, stop: int, n: int) -> np.ndarray:
    """Linear ramp weights for cross-fading overlapping clips; flat at sequence ends."""
    length = stop - start
    idx = np.arange(length)
    w = np.minimum(idx + 1, length - idx).astype(DTYPE)
    if start == 0:
        w[: length // 2] = w.max()
    if stop == n:
        w[length // 2:] = w.max()
    return w


def _feature_clip(frames, masks, masks_upd, flows_fwd, flows_bwd, cfg, weights, mcfg,
                  block_stats):
    """Encode, propagate, transform and decode one inference clip."""
    n = len(frames)
    e = encode_frames(frames, masks_upd, weights.encoder)
    cond = downsample_conditions(flows_fwd, flows_bwd, masks, masks_upd,
                                 FEATURE_STRIDE, cfg.epsilon)
    # feature propagation runs over consecutive local windows of the clip
    feats = []
    for s in range(0, n, cfg.local_length):
        t = min(s + cfg.local_length, n)
        if t - s < 2:
            feats.append(e[s:t])
            continue
        feats.append(feature_propagate_bidir(
            e[s:t], cond["flows_fwd"][s:t - 1], cond["flows_bwd"][s:t - 1],
            cond["valid_fwd"][s:t - 1], cond["valid_bwd"][s:t - 1],
            cond["masks"][s:t], cond["masks_updated"][s:t], weights.propagation))
    feat = np.concatenate(feats)
    fmasks = np.stack(cond["masks"])
    for b, block in enumerate(weights.blocks):
        stats = {}
        feat = msvt_block_forward(feat, fmasks, block, b, mcfg, stats)
        block_stats.append(stats)
    return decode_features(feat, weights.decoder)


def load_weights(arrays: dict, cfg: PipelineConfig):
    """Build ``(inpaint, rfc)`` weight trees from an archive; ``rfc`` is ``None``
    when the archive carries no flow-completion weights."""
    inpaint = None
    if _has_prefix(arrays, INPAINT_PREFIX):
        inpaint = load_into(inpaint_template(cfg), arrays, INPAINT_PREFIX)
    rfc = None
    if _has_prefix(arrays, RFC_PREFIX):
        rfc = load_into(rfc_template(cfg), arrays, RFC_PREFIX)
    return inpaint, rfc


def run_pipeline(frames, masks, flows_fwd, flows_bwd, cfg: PipelineConfig = PipelineConfig(),
                 weights: dict | None = None, return_masks: bool = False):
    """Inpaint ``frames`` inside ``masks``; returns ``(frames_out, diagnostics)``.

    With ``return_masks`` the masks left after image propagation are appended
    as a third element, which tells propagated pixels from hallucinated ones.

    ``weights`` is a name -> array mapping as stored in a weight archive.
    Flow-completion weights (``rfc.*``) switch flow completion from the
    Laplacian baseline to the recurrent network; ``inpaint.*`` weights are
    required in weighted mode.
    """
    frames, masks, flows_fwd, flows_bwd = _check_inputs(frames, masks, flows_fwd, flows_bwd)
    n, h, w = frames.shape[:3]
    inpaint_w, rfc_w = load_weights(weights, cfg) if weights else (None, None)
    if cfg.mode == "weighted" and inpaint_w is None:
        raise WeightShapeError("weighted mode needs inpaint.* weights")

    x = np.where(masks[..., None], 0.0, frames)
    cf, cb = complete_flows(flows_fwd, flows_bwd, masks, rfc_w)
    state = propagate_global(list(x), list(masks), list(cf), list(cb),
                             cfg.max_passes, cfg.epsilon, cfg.sweep_order)
    x_hat = np.stack(state.frames)
    m_hat = np.stack(state.masks)

    initial = int(masks.sum())
    diag = {
        "mode": cfg.mode,
        "flow_completion": "rfc" if rfc_w is not None else "laplacian",
        "frames": n, "height": h, "width": w,
        "masked_initial": initial,
        "masked_per_pass": [int(v) for v in state.masked_per_pass],
        "passes": state.pass_count,
        "fill_events": len(state.events),
        "filled_by_propagation": initial - int(m_hat.sum()),
        "fill_ratio": (initial - int(m_hat.sum())) / initial if initial else 1.0,
        "fill_ratio_per_frame": [
            (float(1 - m_hat[t].sum() / masks[t].sum()) if masks[t].any() else 1.0)
            for t in range(n)],
        "residual_masked": int(m_hat.sum()),
    }

    if cfg.mode == "propagation-only":
        out = laplacian_fill_frames(x_hat, m_hat)
        out = np.where(masks[..., None], out, frames)
        diag["active_windows"] = []
    else:
        if n < 2:
            raise ValueError("weighted mode needs at least two frames")
        if h % FEATURE_STRIDE or w % FEATURE_STRIDE:
            raise ValueError(f"frame dims {h}x{w} are not divisible by {FEATURE_STRIDE}")
        mcfg = msvt_config(cfg)
        acc = np.zeros_like(frames)
        wsum = np.zeros(n, dtype=DTYPE)
        per_clip = []
        for start, stop in clip_ranges(n, cfg.clip_length):
            block_stats = []
            decoded = _feature_clip(
                x_hat[start:stop], masks[start:stop], m_hat[start:stop],
                cf[start:stop - 1], cb[start:stop - 1], cfg, inpaint_w, mcfg, block_stats)
            bw = _blend_weights(start, stop, n)
            acc[start:stop] += bw[:, None, None, None] * decoded
            wsum[start:stop] += bw
            per_clip.append([s["active_windows"] for s in block_stats])
            diag.setdefault("total_windows", block_stats[0]["total_windows"] if block_stats else 0)
        decoded = acc / wsum[:, None, None, None]
        mh = m_hat[..., None].astype(DTYPE)
        out = x_hat * (1.0 - mh) + decoded * mh
        out = np.where(masks[..., None], out, frames)
        diag["active_windows"] = per_clip

    diag["cost"] = cost_summary(cfg, h, w, masks)
    return (out, diag, m_hat) if return_masks else (out, diag)


def cost_summary(cfg: PipelineConfig, h: int, w: int, masks) -> dict:
    """Analytic per-block cost at this geometry, dense versus the realised mask ratio."""
    n = len(masks)
    base = CostConfig(T=min(n, cfg.clip_length), H=h, W=w, window=cfg.window,
                      kernel=cfg.split_kernel, stride=cfg.split_stride, channels=cfg.channels,
                      token_channels=cfg.token_channels, heads=cfg.heads, ffn_ratio=2)
    geo = MsvtConfig(kernel=cfg.split_kernel, stride=cfg.split_stride, window=cfg.window)
    mt, nt = geo.token_dims(h // FEATURE_STRIDE, w // FEATURE_STRIDE)
    if mt <= 0 or nt <= 0:
        return {}
    fm = np.stack([resize(np.asarray(m, dtype=DTYPE), 1 / FEATURE_STRIDE, mode="nearest")
                   for m in masks])
    sq = sparse_query_mask(fm, replace(geo, mask_mode=cfg.mask_mode))
    ratio = float(sq.mean())
    dense = block_flops(base.dense())
    sparse = block_flops(base.sparse(ratio, cfg.kv_stride))
    return {
        "mask_ratio": ratio,
        "dense_gflops_per_block": dense.gflops(),
        "sparse_gflops_per_block": sparse.gflops(),
        "dense_attention_gflops": dense.attention / 1e9,
        "sparse_attention_gflops": sparse.attention / 1e9,
    }
