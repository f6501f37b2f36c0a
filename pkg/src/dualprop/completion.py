"""Flow completion: a harmonic (Laplace) fill and the recurrent network forward pass."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .align import align_plain
from .feature_prop import bidirectional, run_decoder, run_encoder
from .grid import DTYPE, as_grid
from .weights import RfcWeights

RFC_STRIDE = 8


def laplace_system(mask: np.ndarray):
    """Sparse 4-neighbour Laplace system over the masked pixels.

    Returns ``(A, B, unknown, known)`` such that the harmonic fill ``u`` of
    the masked pixels solves ``A @ u = B @ v`` where ``v`` holds the values of
    the unmasked pixels.  Neighbours outside the frame are simply absent
    (natural boundary), so the system is non-singular whenever at least one
    pixel is unmasked.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    idx = np.arange(h * w).reshape(h, w)
    unknown = idx[mask]
    known = idx[~mask]
    slot = np.full(h * w, -1)
    slot[unknown] = np.arange(unknown.size)
    kslot = np.full(h * w, -1)
    kslot[known] = np.arange(known.size)

    ys, xs = np.nonzero(mask)
    degree = np.zeros(unknown.size)
    a_rows, a_cols, b_rows, b_cols = [], [], [], []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        degree += ok
        rows = slot[idx[ys[ok], xs[ok]]]
        nbr = idx[ny[ok], nx[ok]]
        is_unknown = mask[ny[ok], nx[ok]]
        a_rows.append(rows[is_unknown])
        a_cols.append(slot[nbr[is_unknown]])
        b_rows.append(rows[~is_unknown])
        b_cols.append(kslot[nbr[~is_unknown]])
    n = unknown.size
    a_rows = np.concatenate(a_rows)
    a_cols = np.concatenate(a_cols)
    A = sp.coo_matrix(
        (np.concatenate([degree, -np.ones(a_rows.size)]),
         (np.concatenate([np.arange(n), a_rows]), np.concatenate([np.arange(n), a_cols]))),
        shape=(n, n)).tocsc()
    b_rows = np.concatenate(b_rows)
    B = sp.coo_matrix((np.ones(b_rows.size), (b_rows, np.concatenate(b_cols))),
                      shape=(n, known.size)).tocsr()
    return A, B, unknown, known


def _factorise(mask: np.ndarray, cache: Optional[dict]):
    key = (mask.shape, np.packbits(mask).tobytes())
    if cache is not None and key in cache:
        return cache[key]
    A, B, unknown, known = laplace_system(mask)
    entry = (splu(A), B, unknown, known)
    if cache is not None:
        cache[key] = entry
    return entry


def laplace_fill(values: np.ndarray, mask: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    """Replace masked pixels of every channel by the harmonic interpolant of
    the surrounding unmasked pixels.  Unmasked pixels are returned unchanged.

    ``cache`` (any dict) keeps factorisations keyed by mask, so repeated
    masks across a sequence are factorised once.
    """
    squeeze = np.ndim(values) == 2
    values = as_grid(values)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape[:2]:
        raise ValueError(f"mask dims {mask.shape} do not match grid dims {values.shape[:2]}")
    out = values.copy()
    if mask.any():
        if mask.all():
            raise ValueError("cannot harmonically fill a fully masked grid")
        lu, B, unknown, known = _factorise(mask, cache)
        flat = values.reshape(-1, values.shape[2])
        out.reshape(-1, values.shape[2])[unknown] = lu.solve(np.asarray(B @ flat[known]))
    return out[..., 0] if squeeze else out


def complete_flow_laplacian(f: np.ndarray, m: np.ndarray,
                            neighbor: Optional[np.ndarray] = None,
                            cache: Optional[dict] = None) -> np.ndarray:
    """Complete a flow field inside a mask by solving Laplace's equation per channel.

    A fully masked frame has no boundary data; it takes ``neighbor`` (usually
    the completed flow of an adjacent frame) instead.
    """
    f = np.asarray(f, dtype=DTYPE)
    if f.ndim != 3 or f.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {f.shape}")
    m = np.asarray(m, dtype=bool)
    if m.all():
        if neighbor is None:
            raise ValueError("fully masked flow frame needs a neighbour flow to copy")
        return np.array(neighbor, dtype=DTYPE)
    return laplace_fill(f, m, cache)


def complete_flows_laplacian(flows: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                             cache: Optional[dict] = None):
    """Complete a flow sequence, copying from the nearest completed neighbour
    for frames that are masked everywhere."""
    cache = {} if cache is None else cache
    done = [None] * len(flows)
    order = sorted(range(len(flows)), key=lambda t: bool(np.asarray(masks[t]).all()))
    for t in order:
        neighbor = None
        if np.asarray(masks[t]).all():
            near = [s for s in range(len(flows)) if done[s] is not None]
            if near:
                neighbor = done[min(near, key=lambda s: (abs(s - t), s))]
        done[t] = complete_flow_laplacian(flows[t], masks[t], neighbor, cache)
    return done


def rfc_forward(flows: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                w: RfcWeights) -> list:
    """Recurrent flow completion forward pass.

    Flows and masks are encoded at 1/8 resolution, propagated backward and
    forward with deformable alignment, fused, decoded, and composited so
    that flow outside the masks is returned untouched.
    """
    if len(flows) != len(masks):
        raise ValueError(f"{len(flows)} flows but {len(masks)} masks")
    if len(flows) < 2:
        raise ValueError("recurrent flow completion needs at least two flows")
    flows = [np.asarray(f, dtype=DTYPE) for f in flows]
    masks = [np.asarray(m, dtype=DTYPE) for m in masks]
    h, wd = flows[0].shape[:2]
    if h % RFC_STRIDE or wd % RFC_STRIDE:
        raise ValueError(f"flow dims {h}x{wd} are not divisible by {RFC_STRIDE}")

    feats = np.stack([
        run_encoder(np.concatenate([f * (1.0 - m[..., None]), m[..., None]], axis=-1), w.encoder)
        for f, m in zip(flows, masks)])
    if feats.shape[1:3] != (h // RFC_STRIDE, wd // RFC_STRIDE):
        raise ValueError(f"encoder produced {feats.shape[1:3]}, expected 1/8 resolution")
    prop = w.propagation
    fused = bidirectional(
        feats,
        lambda t, nxt: align_plain(feats[t], nxt, prop.backward),
        lambda t, prev: align_plain(feats[t], prev, prop.forward),
        prop.fuse)
    out = []
    for f, m, feat in zip(flows, masks, fused):
        decoded = run_decoder(feat, w.decoder)
        if decoded.shape != f.shape:
            raise ValueError(f"decoder produced {decoded.shape}, expected {f.shape}")
        out.append(np.where(m[..., None] > 0, decoded, f))
    return out
