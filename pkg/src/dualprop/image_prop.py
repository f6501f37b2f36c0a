"""Global image-domain propagation with a forward-backward reliability check."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flow import DEFAULT_EPSILON, consistency_error, warp_backward
from .grid import DTYPE, as_grid, pixel_coords, sample_bilinear

# Bilinear footprint pixels whose interpolation weight is at or below this
# value are ignored by the target-mask test.
FOOTPRINT_TOL = 1e-6


def _footprint_clear(m_next: np.ndarray, tx: np.ndarray, ty: np.ndarray) -> np.ndarray:
    """True where ``(tx, ty)`` is inside the frame and its bilinear footprint
    avoids every masked pixel of ``m_next``."""
    h, w = m_next.shape
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    tx = np.clip(tx, 0, w - 1)
    ty = np.clip(ty, 0, h - 1)
    x0 = np.floor(tx).astype(np.intp)
    y0 = np.floor(ty).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = tx - x0
    ay = ty - y0
    ok = inside
    for yy, xx, wt in ((y0, x0, (1 - ax) * (1 - ay)), (y0, x1, ax * (1 - ay)),
                       (y1, x0, (1 - ax) * ay), (y1, x1, ax * ay)):
        ok &= ~(m_next[yy, xx] & (wt > FOOTPRINT_TOL))
    return ok


def target_unmasked(m_next: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """True where ``p + flow(p)`` lies in the frame and reads only unmasked pixels.

    Every pixel that carries a bilinear weight above ``FOOTPRINT_TOL`` at the
    warped location (which always includes the nearest pixel) must be
    unmasked, so masked content cannot leak in through interpolation.
    """
    m_next = np.asarray(m_next, dtype=bool)
    xs, ys = pixel_coords(*m_next.shape)
    return _footprint_clear(m_next, xs + flow[..., 0], ys + flow[..., 1])


def _check_dims(*arrays):
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"spatial dims differ: {sorted(shapes)}")


def reliable_area(m_t, m_next, f_fwd, f_bwd, epsilon: float = DEFAULT_EPSILON,
                  return_error: bool = False):
    """Pixels of frame ``t`` that may be filled from its neighbour.

    A pixel qualifies when its flow passes the consistency check
    (error < epsilon), it is masked in the current frame, and its warp
    target in the neighbour is unmasked.
    """
    _check_dims(m_t, m_next, f_fwd, f_bwd)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    f_fwd = np.asarray(f_fwd, dtype=DTYPE)
    error = consistency_error(f_fwd, f_bwd)
    area = (error < epsilon) & np.asarray(m_t, dtype=bool) & target_unmasked(m_next, f_fwd)
    return (area, error) if return_error else area


def propagate_step(x_t, x_next, m_t, m_next, f_fwd, f_bwd,
                   epsilon: float = DEFAULT_EPSILON):
    """Fill the reliable area of frame ``t`` from its neighbour.

    Returns the updated frame and mask.
    """
    _check_dims(x_t, x_next, m_t, m_next, f_fwd, f_bwd)
    area = reliable_area(m_t, m_next, f_fwd, f_bwd, epsilon)
    x_t = as_grid(x_t)
    filled = np.where(area[..., None], as_grid(warp_backward(x_next, f_fwd)), x_t)
    return filled, np.asarray(m_t, dtype=bool) & ~area


@dataclass
class FillEvent:
    pass_index: int
    direction: str
    frame: int
    source: int
    filled: int
    max_error: float


@dataclass
class PropagationState:
    frames: list
    masks: list
    pass_count: int = 0
    masked_per_pass: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def masked_total(self) -> int:
        return int(sum(m.sum() for m in self.masks))


def propagate_global(x: Sequence[np.ndarray], m: Sequence[np.ndarray],
                     f_fwd: Sequence[np.ndarray], f_bwd: Sequence[np.ndarray],
                     max_passes: int = 4, epsilon: float = DEFAULT_EPSILON,
                     order: str = "backward-first") -> PropagationState:
    """Alternate backward and forward sweeps over the whole sequence.

    ``f_fwd[t]`` maps frame ``t`` to ``t + 1`` and ``f_bwd[t]`` maps frame
    ``t + 1`` to ``t``.  The backward sweep visits ``t = T-2 .. 0`` pulling
    from ``t + 1``; the forward sweep visits ``t = 1 .. T-1`` pulling from
    ``t - 1``.  Masks are updated as soon as a frame is filled, so content
    can travel several frames within one sweep.  Stops after a pass that
    fills nothing or after ``max_passes`` passes.
    """
    n = len(x)
    if len(m) != n:
        raise ValueError(f"{n} frames but {len(m)} masks")
    if len(f_fwd) != n - 1 or len(f_bwd) != n - 1:
        raise ValueError(f"need {n - 1} forward and backward flows, got {len(f_fwd)} and {len(f_bwd)}")
    if max_passes < 1:
        raise ValueError("max_passes must be at least 1")
    if order not in ("backward-first", "forward-first"):
        raise ValueError(f"unknown sweep order {order!r}")

    frames = [as_grid(f).copy() for f in x]
    masks = [np.asarray(mm, dtype=bool).copy() for mm in m]
    state = PropagationState(frames, masks)
    state.masked_per_pass.append(state.masked_total)

    def sweep(direction, pass_index):
        if direction == "backward":
            steps = [(t, t + 1, f_fwd[t], f_bwd[t]) for t in range(n - 2, -1, -1)]
        else:
            steps = [(t, t - 1, f_bwd[t - 1], f_fwd[t - 1]) for t in range(1, n)]
        for t, s, flow, partner in steps:
            # only masked pixels can be filled, so evaluate the test there alone
            ys, xs = np.nonzero(masks[t])
            if not ys.size:
                continue
            fl = np.asarray(flow, dtype=DTYPE)[ys, xs]
            tx, ty = xs + fl[:, 0], ys + fl[:, 1]
            residual = fl + sample_bilinear(partner, tx, ty)
            error = np.sum(residual * residual, axis=-1)
            ok = (error < epsilon) & _footprint_clear(masks[s], tx, ty)
            count = int(ok.sum())
            if not count:
                continue
            frames[t][ys[ok], xs[ok]] = sample_bilinear(frames[s], tx[ok], ty[ok])
            masks[t][ys[ok], xs[ok]] = False
            state.events.append(FillEvent(pass_index, direction, t, s, count,
                                          float(error[ok].max())))

    directions = ("backward", "forward") if order == "backward-first" else ("forward", "backward")
    for p in range(max_passes):
        before = state.masked_total
        for d in directions:
            sweep(d, p)
        state.pass_count = p + 1
        state.masked_per_pass.append(state.masked_total)
        if state.masked_total == before:
            break
    return state
