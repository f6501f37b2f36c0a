"""Synthetic video with exact ground-truth motion, masks and corruption.

Frames are crops of one canonical value-noise texture translated by an
integer velocity per frame, so backward warping with the ground-truth flow
reproduces frames bit-exactly wherever the warp target stays inside the
frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DTYPE


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    T: int = 10
    H: int = 128
    W: int = 192
    velocity: tuple = (1, 0)
    octaves: tuple = (32, 16, 8, 4)  # lattice cell sizes, coarse to fine

    def __post_init__(self):
        vx, vy = self.velocity
        if int(vx) != vx or int(vy) != vy:
            raise ValueError("velocities must be integers")
        if min(self.T, self.H, self.W) <= 0:
            raise ValueError("T, H and W must be positive")
        if abs(vx) * self.T >= self.W / 2 or abs(vy) * self.T >= self.H / 2:
            raise ValueError(f"velocity {self.velocity} moves content out of a "
                             f"{self.H}x{self.W} frame within {self.T} frames")


@dataclass
class SyntheticSequence:
    frames: np.ndarray       # (T, H, W, 3)
    flows_fwd: np.ndarray    # (T-1, H, W, 2), frame t -> t+1
    flows_bwd: np.ndarray    # (T-1, H, W, 2), frame t+1 -> t
    texture: np.ndarray
    origin: tuple = field(default=(0, 0))


def value_noise(rng: np.random.Generator, h: int, w: int, octaves=(32, 16, 8, 4),
                channels: int = 3) -> np.ndarray:
    """Sum of smoothly interpolated random lattices, rescaled into [0.05, 0.95]."""
    out = np.zeros((h, w, channels))
    amp = 1.0
    for cell in octaves:
        gh, gw = h // cell + 2, w // cell + 2
        lattice = rng.random((gh, gw, channels))
        y = np.arange(h) / cell
        x = np.arange(w) / cell
        y0, x0 = y.astype(int), x.astype(int)
        ty, tx = y - y0, x - x0
        ty = (ty * ty * (3 - 2 * ty))[:, None, None]
        tx = (tx * tx * (3 - 2 * tx))[None, :, None]
        a = lattice[y0][:, x0]
        b = lattice[y0][:, x0 + 1]
        c = lattice[y0 + 1][:, x0]
        d = lattice[y0 + 1][:, x0 + 1]
        out += amp * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty)
        amp *= 0.6
    lo, hi = out.min(), out.max()
    return 0.05 + 0.9 * (out - lo) / (hi - lo)


def gen_sequence(s: SceneSpec) -> SyntheticSequence:
    """Render ``s.T`` frames of a texture translating by ``s.velocity`` per frame.

    Frame ``t`` shows the texture shifted by ``t * velocity``, so the forward
    flow is ``velocity`` everywhere and the backward flow its negation.
    """
    rng = np.random.default_rng(s.seed)
    vx, vy = int(s.velocity[0]), int(s.velocity[1])
    py, px = abs(vy) * s.T, abs(vx) * s.T
    texture = value_noise(rng, s.H + 2 * py, s.W + 2 * px, s.octaves)
    frames = np.stack([
        texture[py - t * vy: py - t * vy + s.H, px - t * vx: px - t * vx + s.W]
        for t in range(s.T)])
    fwd = np.zeros((s.T - 1, s.H, s.W, 2), dtype=DTYPE)
    fwd[..., 0] = vx
    fwd[..., 1] = vy
    return SyntheticSequence(frames, fwd, -fwd, texture, (py, px))


def affine_flow(h: int, w: int, matrix, offset=(0.0, 0.0)) -> np.ndarray:
    """Flow ``A @ (x, y) + b`` sampled at every pixel centre, shape ``(H, W, 2)``."""
    a = np.asarray(matrix, dtype=DTYPE).reshape(2, 2)
    ys, xs = np.mgrid[0:h, 0:w].astype(DTYPE)
    out = np.empty((h, w, 2), dtype=DTYPE)
    out[..., 0] = a[0, 0] * xs + a[0, 1] * ys + offset[0]
    out[..., 1] = a[1, 0] * xs + a[1, 1] * ys + offset[1]
    return out


def random_affine_flow(rng: np.random.Generator, h: int, w: int, scale: float = 0.05,
                       shift: float = 3.0) -> np.ndarray:
    return affine_flow(h, w, rng.uniform(-scale, scale, size=(2, 2)),
                       rng.uniform(-shift, shift, size=2))


def _rect(h, w, cy, cx, rh, rw):
    m = np.zeros((h, w), dtype=bool)
    m[max(cy - rh // 2, 0): cy - rh // 2 + rh, max(cx - rw // 2, 0): cx - rw // 2 + rw] = True
    return m


def _disk(h, w, cy, cx, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r


def gen_masks(s: SceneSpec, kind: str = "stationary", seed: int = 0,
              coverage: float = 0.136, margin: int = 4) -> np.ndarray:
    """Random masks of shape ``(T, H, W)``.

    ``stationary`` is one rectangle fixed over time; ``object`` is a disk that
    translates with its own integer velocity.  Sizes are chosen so the
    fraction of masked pixels over the whole clip is close to ``coverage``.
    """
    rng = np.random.default_rng(seed)
    h, w, t_len = s.H, s.W, s.T
    if coverage <= 0:
        return np.zeros((t_len, h, w), dtype=bool)
    area = coverage * h * w

    if kind == "stationary":
        aspect = rng.uniform(0.7, 1.4)
        rh = min(max(int(round(np.sqrt(area / aspect))), 1), h - 2 * margin)
        rw = min(max(int(round(area / rh)), 1), w - 2 * margin)
        cy = int(rng.integers(margin + rh // 2, h - margin - (rh - rh // 2) + 1))
        cx = int(rng.integers(margin + rw // 2, w - margin - (rw - rw // 2) + 1))
        m = _rect(h, w, cy, cx, rh, rw)
        return np.repeat(m[None], t_len, axis=0)

    if kind == "object":
        vel = rng.integers(-2, 3, size=2)
        if not vel.any():
            vel[0] = 1
        r = np.sqrt(area / np.pi)
        travel_y, travel_x = abs(vel[1]) * (t_len - 1), abs(vel[0]) * (t_len - 1)
        ri = int(np.ceil(r))
        lo_y, hi_y = margin + ri, h - margin - ri - travel_y
        lo_x, hi_x = margin + ri, w - margin - ri - travel_x
        y0 = int(rng.integers(lo_y, max(hi_y, lo_y) + 1))
        x0 = int(rng.integers(lo_x, max(hi_x, lo_x) + 1))
        if vel[1] < 0:
            y0 += travel_y
        if vel[0] < 0:
            x0 += travel_x

        def render(radius):
            return np.stack([_disk(h, w, y0 + k * vel[1], x0 + k * vel[0], radius)
                             for k in range(t_len)])

        # the disk may be clipped by the frame; bisect the radius onto the target
        lo, hi = 0.5, 2 * r + 2
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if render(mid).mean() < coverage:
                lo = mid
            else:
                hi = mid
        return render(0.5 * (lo + hi))

    raise ValueError(f"unknown mask kind {kind!r}")


def corrupt(frames, masks, flows_fwd=None, flows_bwd=None):
    """Zero frame pixels and flow vectors inside the masks.

    ``flows_fwd[t]`` lives on frame ``t`` and ``flows_bwd[t]`` on frame
    ``t + 1``; each is masked with the mask of the frame it lives on.
    Returns ``(frames, flows_fwd, flows_bwd)``; inputs are not modified.
    """
    masks = np.asarray(masks, dtype=bool)
    frames = np.where(masks[..., None], 0.0, np.asarray(frames, dtype=DTYPE))
    out_fwd = out_bwd = None
    if flows_fwd is not None:
        out_fwd = np.where(masks[:-1, ..., None], 0.0, np.asarray(flows_fwd, dtype=DTYPE))
    if flows_bwd is not None:
        out_bwd = np.where(masks[1:, ..., None], 0.0, np.asarray(flows_bwd, dtype=DTYPE))
    return frames, out_fwd, out_bwd
