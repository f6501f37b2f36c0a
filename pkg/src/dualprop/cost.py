"""Closed-form FLOP counts for dense and mask-guided sparse transformer blocks.

Convention: one multiply-accumulate is two FLOPs; softmax costs
``SOFTMAX_FLOPS`` per logit.  Window attention is counted with the full
(unclipped) expanded key window, so counts are exact polynomials in the
geometry and the sparse/dense ratios come out in closed form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from fractions import Fraction

from .msvt import _split_dims, default_padding
from .reference import reference_curves

SOFTMAX_FLOPS = 5
STAGES = ("split_comp", "projections", "qk", "softmax", "av", "ffn")
ATTENTION_STAGES = ("qk", "softmax", "av")


@dataclass(frozen=True)
class CostConfig:
    T: int = 10
    H: int = 240
    W: int = 432
    window: tuple = (5, 9)
    kernel: tuple = (7, 7)
    stride: tuple = (3, 3)
    channels: int = 128      # feature width entering the soft split
    token_channels: int = 512
    heads: int = 4
    ffn_ratio: int = 4
    mask_ratio: float = 1.0
    kv_stride: int = 1
    expansion: bool = True
    global_tokens: bool = True
    feature_stride: int = 4

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        for name in ("T", "H", "W", "channels", "token_channels", "heads", "kv_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def dense(self) -> "CostConfig":
        """The same geometry with every query window active and every key frame."""
        return replace(self, mask_ratio=1.0, kv_stride=1)

    def sparse(self, mask_ratio: float = 1 / 6, kv_stride: int = 2) -> "CostConfig":
        return replace(self, mask_ratio=mask_ratio, kv_stride=kv_stride)


@dataclass
class CostReport:
    """Per-stage counts, held as exact rationals."""

    stages: dict
    geometry: dict

    @property
    def total(self) -> float:
        return float(sum(self.stages.values()))

    @property
    def attention(self) -> float:
        return float(self.attention_exact)

    @property
    def attention_exact(self) -> Fraction:
        return sum((Fraction(self.stages[s]) for s in ATTENTION_STAGES), Fraction(0))

    def gflops(self) -> float:
        return self.total / 1e9


def geometry(c: CostConfig) -> dict:
    hf, wf = c.H // c.feature_stride, c.W // c.feature_stride
    pad = default_padding(c.kernel, c.stride)
    mt, nt = _split_dims((hf, wf), c.kernel, c.stride, pad)
    m, n = math.ceil(mt / c.window[0]), math.ceil(nt / c.window[1])
    eh, ew = (c.window[0] // 2, c.window[1] // 2) if c.expansion else (0, 0)
    windows = m * n
    ratio = Fraction(c.mask_ratio).limit_denominator(1 << 20)
    active = math.ceil(ratio * windows)
    key_frames = Fraction(c.T, c.kv_stride)  # averaged over alternating blocks
    keys = key_frames * (c.window[0] + 2 * eh) * (c.window[1] + 2 * ew)
    if c.global_tokens:
        keys += key_frames
    return {
        "feature": (hf, wf), "tokens": (mt, nt), "windows": (m, n),
        "active_windows": active, "total_windows": windows,
        "queries_per_window": c.T * c.window[0] * c.window[1],
        "key_frames": key_frames, "keys_per_window": keys,
    }


def block_flops(c: CostConfig) -> CostReport:
    """FLOPs of one transformer block, split by stage."""
    g = geometry(c)
    mt, nt = g["tokens"]
    tokens = c.T * mt * nt
    cz = c.token_channels
    patch = c.kernel[0] * c.kernel[1] * c.channels
    a = g["active_windows"]
    nq = g["queries_per_window"]
    nk = g["keys_per_window"]

    macs = {
        "split_comp": 2 * tokens * patch * cz,
        # Q and output projections for active query tokens, K and V for key-frame tokens
        "projections": 2 * a * nq * cz * cz + (2 * g["key_frames"] * mt * nt * cz * cz if a else 0),
        "qk": a * nq * nk * cz,
        "av": a * nq * nk * cz,
        "ffn": 2 * tokens * cz * c.ffn_ratio * cz,
    }
    stages = {k: 2 * v for k, v in macs.items()}
    stages["softmax"] = SOFTMAX_FLOPS * a * c.heads * nq * nk
    return CostReport({s: stages[s] for s in STAGES}, g)


def model_curves(base: CostConfig = CostConfig(), lengths=(10, 20, 30, 40, 50, 60),
                 heights=(240, 480, 720, 960), mask_ratio: float = 1 / 6,
                 kv_stride: int = 2) -> dict:
    """GFLOPs of the analytic model for a sparse and a dense configuration."""
    out = {"length": {}, "resolution": {}}
    for label, cfg in (("model-sparse", base.sparse(mask_ratio, kv_stride)),
                       ("model-dense", base.dense())):
        out["length"][label] = [(t, block_flops(replace(cfg, T=t)).gflops()) for t in lengths]
        out["resolution"][label] = [
            (h, block_flops(replace(cfg, H=h, W=round(h * 432 / 240))).gflops()) for h in heights]
    return out


def write_series_csv(path, series: dict) -> None:
    """Write ``method, x, gflops`` rows for one axis of curves."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "x", "gflops"])
        for method, points in series.items():
            for x, y in points:
                writer.writerow([method, x, f"{y:.6g}"])


def cost_table(base: CostConfig = CostConfig()) -> str:
    """Plain-text table of model and reference GFLOPs against temporal length."""
    model = model_curves(base)["length"]
    ref = reference_curves()["length"]
    cols = list(ref) + list(model)
    lengths = sorted({x for pts in list(ref.values()) + list(model.values()) for x, _ in pts})
    lines = ["T".rjust(4) + "".join(c.rjust(14) for c in cols)]
    for t in lengths:
        row = [str(t).rjust(4)]
        for c in cols:
            pts = dict((ref.get(c) or model.get(c)))
            row.append((f"{pts[t]:.2f}" if t in pts else "-").rjust(14))
        lines.append("".join(row))
    return "\n".join(lines)
