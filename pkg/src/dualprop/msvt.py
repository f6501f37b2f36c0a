"""Mask-guided sparse video transformer block (forward pass only).

Token layout is ``(T, M, N, C)``.  A block soft-splits a feature clip into
overlapping patch tokens, partitions the token grid into ``h x w`` windows,
runs windowed multi-head attention only for windows that ever contain mask
(queries from every frame, keys and values from a strided subset of frames,
an expanded spatial neighbourhood and one pooled global token per key
frame), applies the feed-forward network to every token and composes the
tokens back to a feature clip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .grid import DTYPE
from .weights import MsvtBlockWeights


@dataclass(frozen=True)
class MsvtConfig:
    kernel: tuple = (7, 7)
    stride: tuple = (3, 3)
    padding: Optional[tuple] = None
    window: tuple = (5, 9)
    expand: bool = True
    global_tokens: bool = True
    kv_stride: int = 2
    mask_mode: str = "any"  # or "nearest"

    @property
    def pad(self) -> tuple:
        if self.padding is not None:
            return tuple(self.padding)
        return default_padding(self.kernel, self.stride)

    def token_dims(self, h: int, w: int) -> tuple:
        return _split_dims((h, w), self.kernel, self.stride, self.pad)

    def window_counts(self, h: int, w: int) -> tuple:
        mt, nt = self.token_dims(h, w)
        return math.ceil(mt / self.window[0]), math.ceil(nt / self.window[1])


def default_padding(kernel, stride) -> tuple:
    """No padding for non-overlapping patches, otherwise ``(k - 1) // 2``."""
    return tuple(0 if k == s else (k - 1) // 2 for k, s in zip(kernel, stride))


def _split_dims(hw, kernel, stride, padding) -> tuple:
    dims = []
    for n, k, s, p in zip(hw, kernel, stride, padding):
        if s > k:
            raise ValueError(f"soft split stride {s} exceeds kernel {k}")
        if n + 2 * p < k:
            raise ValueError(f"soft split kernel {k} larger than padded size {n + 2 * p}")
        dims.append((n + 2 * p - k) // s + 1)
    return tuple(dims)


def extract_patches(feat: np.ndarray, kernel, stride, padding=None) -> np.ndarray:
    """Overlapping patches of shape ``(T, M, N, kh * kw * C)``, zero-padded borders.

    Each patch vector is ordered ``(row, column, channel)``.
    """
    feat = np.asarray(feat, dtype=DTYPE)
    if feat.ndim == 3:
        feat = feat[None]
    kh, kw = kernel
    sh, sw = stride
    ph, pw = default_padding(kernel, stride) if padding is None else padding
    m, n = _split_dims(feat.shape[1:3], kernel, stride, (ph, pw))
    padded = np.pad(feat, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw][:, :m, :n]                 # (T, M, N, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        feat.shape[0], m, n, kh * kw * feat.shape[3])


def soft_split(feat: np.ndarray, kernel=(7, 7), stride=(3, 3), padding=None,
               proj: Optional[np.ndarray] = None, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Embed overlapping patches as tokens, optionally through a linear projection."""
    patches = extract_patches(feat, kernel, stride, padding)
    if proj is not None:
        patches = patches @ proj
    if bias is not None:
        patches = patches + bias
    return patches


def fold_counts(out_dims, kernel, stride, padding=None) -> np.ndarray:
    """Number of patches covering each output pixel."""
    ones = np.ones((1,) + tuple(out_dims) + (1,))
    return soft_composition(extract_patches(ones, kernel, stride, padding), kernel, stride,
                            out_dims, padding, normalize=False)[0, :, :, 0]


def soft_composition(tokens: np.ndarray, kernel=(7, 7), stride=(3, 3), out_dims=None,
                     padding=None, proj: Optional[np.ndarray] = None,
                     bias: Optional[np.ndarray] = None, normalize: bool = True) -> np.ndarray:
    """Inverse of :func:`soft_split`: project tokens back to patches,
    overlap-add them and divide each pixel by the number of patches covering it."""
    tokens = np.asarray(tokens, dtype=DTYPE)
    if tokens.ndim == 3:
        tokens = tokens[None]
    if out_dims is None:
        raise ValueError("soft_composition needs the output spatial dims")
    kh, kw = kernel
    sh, sw = stride
    ph, pw = default_padding(kernel, stride) if padding is None else padding
    t, m, n, _ = tokens.shape
    if (m, n) != _split_dims(out_dims, kernel, stride, (ph, pw)):
        raise ValueError(f"token grid {m}x{n} does not match output dims {tuple(out_dims)}")
    patches = tokens @ proj if proj is not None else tokens
    if bias is not None:
        patches = patches + bias
    c = patches.shape[-1] // (kh * kw)
    if c * kh * kw != patches.shape[-1]:
        raise ValueError("patch length is not a multiple of the kernel area")
    patches = patches.reshape(t, m, n, kh, kw, c)
    h, w = out_dims
    canvas = np.zeros((t, h + 2 * ph + sh, w + 2 * pw + sw, c))
    count = np.zeros(canvas.shape[1:3])
    for i in range(kh):
        for j in range(kw):
            canvas[:, i:i + sh * m:sh, j:j + sw * n:sw] += patches[:, :, :, i, j]
            count[i:i + sh * m:sh, j:j + sw * n:sw] += 1.0
    canvas = canvas[:, ph:ph + h, pw:pw + w]
    count = count[ph:ph + h, pw:pw + w]
    if not normalize:
        return canvas
    if (count == 0).any():
        raise ValueError("soft split geometry leaves output pixels uncovered")
    return canvas / count[None, :, :, None]


def window_mask_from_tokens(token_mask: np.ndarray, window) -> np.ndarray:
    """Clip of the temporal sum: 1 for windows containing any masked token."""
    token_mask = np.asarray(token_mask, dtype=bool)
    if token_mask.ndim == 3:
        token_mask = token_mask.any(axis=0)
    mt, nt = token_mask.shape
    h, w = window
    m, n = math.ceil(mt / h), math.ceil(nt / w)
    padded = np.zeros((m * h, n * w), dtype=bool)
    padded[:mt, :nt] = token_mask
    return padded.reshape(m, h, n, w).any(axis=(1, 3))


def sparse_query_mask(masks: np.ndarray, cfg: MsvtConfig) -> np.ndarray:
    """Per-window query indicator from a clip of masks at feature resolution.

    ``any`` mode marks a window when any pixel inside the patch footprint of
    any of its tokens is masked in any frame.  ``nearest`` mode resizes the
    masks straight to the ``m x n`` window grid by nearest sampling before the
    temporal sum.
    """
    masks = np.asarray(masks, dtype=DTYPE)
    if masks.ndim == 2:
        masks = masks[None]
    h, w = masks.shape[1:]
    if cfg.mask_mode == "any":
        patches = extract_patches(masks[..., None], cfg.kernel, cfg.stride, cfg.pad)
        return window_mask_from_tokens(patches.max(axis=-1) > 0, cfg.window)
    if cfg.mask_mode == "nearest":
        m, n = cfg.window_counts(h, w)
        rows = np.arange(m) * h // m
        cols = np.arange(n) * w // n
        return masks[:, rows][:, :, cols].sum(axis=0) > 0
    raise ValueError(f"unknown mask mode {cfg.mask_mode!r}")


def strided_kv_frames(block_index: int, t_l: int, stride: int = 2) -> list:
    """Key/value frames used by a block: even frames for even blocks, odd for odd."""
    if block_index < 0:
        raise ValueError("block_index must be non-negative")
    if stride <= 1:
        return list(range(t_l))
    return [f for f in range(t_l) if f % stride == block_index % stride]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int,
              key_mask: Optional[np.ndarray] = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention over row-token matrices.

    ``q`` is ``(Nq, C)``, ``k`` and ``v`` are ``(Nk, C)``; channels are split
    evenly across heads and the per-head outputs are concatenated.  Keys with
    ``key_mask == False`` receive no weight.
    """
    q = np.asarray(q, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention expects 2-D token matrices")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    c = q.shape[1]
    if c % heads or v.shape[1] % heads:
        raise ValueError(f"{c} channels not divisible by {heads} heads")
    d = c // heads
    qh = q.reshape(q.shape[0], heads, d).transpose(1, 0, 2)
    kh = k.reshape(k.shape[0], heads, d).transpose(1, 0, 2)
    vh = v.reshape(v.shape[0], heads, -1).transpose(1, 0, 2)
    logits = qh @ kh.transpose(0, 2, 1) / math.sqrt(d)
    if key_mask is not None:
        logits = np.where(np.asarray(key_mask, dtype=bool)[None, None, :], logits, -np.inf)
    weights = softmax(logits)
    out = (weights @ vh).transpose(1, 0, 2).reshape(q.shape[0], -1)
    return (out, weights) if return_weights else out


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def feed_forward(z: np.ndarray, w: MsvtBlockWeights) -> np.ndarray:
    zn = layer_norm(z, w.norm2_gamma, w.norm2_beta)
    return z + gelu(zn @ w.ffn_w1 + w.ffn_b1) @ w.ffn_w2 + w.ffn_b2


def attention_stage(z: np.ndarray, sq: np.ndarray, w: MsvtBlockWeights, cfg: MsvtConfig,
                    block_index: int = 0) -> np.ndarray:
    """Windowed sparse attention with residual; tokens of skipped windows pass through."""
    z = np.asarray(z, dtype=DTYPE)
    t, mt, nt, c = z.shape
    wh, ww = cfg.window
    m, n = math.ceil(mt / wh), math.ceil(nt / ww)
    sq = np.asarray(sq, dtype=bool)
    if sq.shape != (m, n):
        raise ValueError(f"query mask shape {sq.shape} does not match {m}x{n} windows")
    if c % w.heads:
        raise ValueError(f"token width {c} not divisible by {w.heads} heads")
    out = z.copy()
    if not sq.any():
        return out

    zn = layer_norm(z, w.norm1_gamma, w.norm1_beta)
    q = zn @ w.wq + w.bq
    k = zn @ w.wk + w.bk
    v = zn @ w.wv + w.bv
    frames = strided_kv_frames(block_index, t, cfg.kv_stride) or list(range(t))
    eh, ew = (wh // 2, ww // 2) if cfg.expand else (0, 0)
    if cfg.global_tokens:
        pooled = zn[frames].mean(axis=(1, 2))
        kg = pooled @ w.wk + w.bk
        vg = pooled @ w.wv + w.bv

    for i, j in zip(*np.nonzero(sq)):
        r0, r1 = i * wh, min((i + 1) * wh, mt)
        c0, c1 = j * ww, min((j + 1) * ww, nt)
        kr0, kr1 = max(r0 - eh, 0), min(r1 + eh, mt)
        kc0, kc1 = max(c0 - ew, 0), min(c1 + ew, nt)
        qw = q[:, r0:r1, c0:c1].reshape(-1, c)
        kw_ = k[frames, kr0:kr1, kc0:kc1].reshape(-1, c)
        vw = v[frames, kr0:kr1, kc0:kc1].reshape(-1, c)
        if cfg.global_tokens:
            kw_ = np.concatenate([kw_, kg])
            vw = np.concatenate([vw, vg])
        attended = attention(qw, kw_, vw, w.heads) @ w.wo + w.bo
        out[:, r0:r1, c0:c1] += attended.reshape(t, r1 - r0, c1 - c0, c)
    return out


def token_block_forward(z: np.ndarray, sq: np.ndarray, w: MsvtBlockWeights, cfg: MsvtConfig,
                        block_index: int = 0) -> np.ndarray:
    """Attention stage followed by the feed-forward network on every token."""
    return feed_forward(attention_stage(z, sq, w, cfg, block_index), w)


def msvt_block_forward(feat: np.ndarray, masks: np.ndarray, w: MsvtBlockWeights,
                       block_index: int = 0, cfg: MsvtConfig = MsvtConfig(),
                       stats: Optional[dict] = None) -> np.ndarray:
    """One sparse transformer block on a ``(T, H, W, C)`` feature clip.

    ``masks`` are the clip's masks at feature resolution.  When ``stats`` is
    given it receives the number of active and total query windows.
    """
    feat = np.asarray(feat, dtype=DTYPE)
    masks = np.asarray(masks)
    if feat.ndim != 4 or masks.shape != feat.shape[:3]:
        raise ValueError(f"feature clip {feat.shape} and masks {masks.shape} disagree")
    z = soft_split(feat, cfg.kernel, cfg.stride, cfg.pad, w.split_proj, w.split_bias)
    sq = sparse_query_mask(masks, cfg)
    if stats is not None:
        stats["active_windows"] = int(sq.sum())
        stats["total_windows"] = int(sq.size)
    z = token_block_forward(z, sq, w, cfg, block_index)
    return soft_composition(z, cfg.kernel, cfg.stride, feat.shape[1:3], cfg.pad,
                            w.comp_proj, w.comp_bias)
