"""Weight containers for the learned stages and their seeded initialisers.

Every container is a plain dataclass tree whose leaves are numpy arrays or
:class:`~dualprop.grid.Kernel` objects.  :func:`flatten` turns such a tree
into ``name -> array`` pairs for the weight archive, and :func:`load_into`
copies archive arrays back into a template built from the configuration,
checking every name and shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from .grid import DTYPE, Kernel

TAPS = 9  # 3x3 deformable kernel, single group


def _kernel(rng, c_out, c_in, k, scale=1.0, bias=True) -> Kernel:
    std = scale / np.sqrt(c_in * k * k)
    w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    b = rng.normal(0.0, 0.01, size=c_out) if bias else np.zeros(c_out)
    return Kernel(w, b)


@dataclass
class AlignmentWeights:
    """Offset network, deformable kernel and fusion block of one alignment."""

    offset_net: list  # three 3x3 Kernels, ReLU between them
    dcn: Kernel
    fuse_skip: Kernel  # 1x1 over concat(aligned, current)
    fuse_conv1: Kernel
    fuse_conv2: Kernel

    @property
    def channels(self) -> int:
        return self.dcn.out_channels


@dataclass
class EncoderWeights:
    layers: list
    strides: list


@dataclass
class DecoderWeights:
    """Each layer is a x2 bilinear upsample followed by a 3x3 convolution."""

    layers: list


@dataclass
class FeaturePropWeights:
    backward: AlignmentWeights
    forward: AlignmentWeights
    fuse: Kernel  # 1x1 over concat(backward, forward)


@dataclass
class RfcWeights:
    encoder: EncoderWeights
    propagation: FeaturePropWeights
    decoder: DecoderWeights


@dataclass
class MsvtBlockWeights:
    split_proj: np.ndarray      # (kh*kw*C, Cz)
    split_bias: np.ndarray
    comp_proj: np.ndarray       # (Cz, kh*kw*C)
    comp_bias: np.ndarray
    norm1_gamma: np.ndarray
    norm1_beta: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    norm2_gamma: np.ndarray
    norm2_beta: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    heads: int = field(default=4, metadata={"static": True})


@dataclass
class InpaintWeights:
    encoder: EncoderWeights
    propagation: FeaturePropWeights
    blocks: list
    decoder: DecoderWeights


def init_alignment(rng, channels: int, cond_channels: int) -> AlignmentWeights:
    c = channels
    offset_net = [
        _kernel(rng, c, cond_channels, 3),
        _kernel(rng, c, c, 3),
        # small last layer keeps the initial offsets near zero
        _kernel(rng, 3 * TAPS, c, 3, scale=0.1),
    ]
    return AlignmentWeights(
        offset_net=offset_net,
        dcn=_kernel(rng, c, c, 3),
        fuse_skip=_kernel(rng, c, 2 * c, 1),
        fuse_conv1=_kernel(rng, c, 2 * c, 3),
        fuse_conv2=_kernel(rng, c, c, 3, scale=0.5),
    )


def init_feature_prop(rng, channels: int, flow_guided: bool = True) -> FeaturePropWeights:
    cond = 2 * channels + 5 if flow_guided else 2 * channels
    return FeaturePropWeights(
        backward=init_alignment(rng, channels, cond),
        forward=init_alignment(rng, channels, cond),
        fuse=_kernel(rng, channels, 2 * channels, 1),
    )


def init_rfc(rng, channels: int = 32) -> RfcWeights:
    c = channels
    encoder = EncoderWeights(
        layers=[_kernel(rng, c, 3, 3), _kernel(rng, c, c, 3), _kernel(rng, c, c, 3)],
        strides=[2, 2, 2],
    )
    decoder = DecoderWeights(
        layers=[_kernel(rng, c, c, 3), _kernel(rng, c, c, 3), _kernel(rng, 2, c, 3)])
    return RfcWeights(encoder, init_feature_prop(rng, c, flow_guided=False), decoder)


def init_frame_encoder(rng, channels: int = 64) -> EncoderWeights:
    c = channels
    return EncoderWeights(
        layers=[_kernel(rng, c // 2, 4, 3), _kernel(rng, c, c // 2, 3), _kernel(rng, c, c, 3)],
        strides=[2, 2, 1],
    )


def init_frame_decoder(rng, channels: int = 64) -> DecoderWeights:
    c = channels
    return DecoderWeights(layers=[_kernel(rng, c // 2, c, 3), _kernel(rng, 3, c // 2, 3)])


def init_msvt_block(rng, in_channels: int, token_channels: int, kernel=(7, 7),
                    heads: int = 4, ffn_ratio: int = 2) -> MsvtBlockWeights:
    patch = kernel[0] * kernel[1] * in_channels
    cz = token_channels
    hidden = ffn_ratio * cz

    def mat(n_in, n_out, scale=1.0):
        return rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out))

    return MsvtBlockWeights(
        split_proj=mat(patch, cz), split_bias=np.zeros(cz),
        comp_proj=mat(cz, patch), comp_bias=np.zeros(patch),
        norm1_gamma=np.ones(cz), norm1_beta=np.zeros(cz),
        wq=mat(cz, cz), wk=mat(cz, cz), wv=mat(cz, cz), wo=mat(cz, cz, 0.5),
        bq=np.zeros(cz), bk=np.zeros(cz), bv=np.zeros(cz), bo=np.zeros(cz),
        norm2_gamma=np.ones(cz), norm2_beta=np.zeros(cz),
        ffn_w1=mat(cz, hidden), ffn_b1=np.zeros(hidden),
        ffn_w2=mat(hidden, cz, 0.5), ffn_b2=np.zeros(cz),
        heads=heads,
    )


def init_inpaint(rng, channels: int = 64, token_channels: int = 128, num_blocks: int = 8,
                 kernel=(7, 7), heads: int = 4) -> InpaintWeights:
    return InpaintWeights(
        encoder=init_frame_encoder(rng, channels),
        propagation=init_feature_prop(rng, channels, flow_guided=True),
        blocks=[init_msvt_block(rng, channels, token_channels, kernel, heads)
                for _ in range(num_blocks)],
        decoder=init_frame_decoder(rng, channels),
    )


def flatten(obj, prefix: str = "") -> dict:
    """Map every array leaf of a weight tree to a dotted name."""
    out = {}
    join = (lambda name: f"{prefix}.{name}") if prefix else (lambda name: name)
    if isinstance(obj, Kernel):
        out[join("weight")] = obj.weight
        if obj.bias is not None:
            out[join("bias")] = obj.bias
    elif is_dataclass(obj):
        for f in fields(obj):
            if f.metadata.get("static") or f.name == "strides":
                continue
            out.update(flatten(getattr(obj, f.name), join(f.name)))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(flatten(item, join(str(i))))
    elif isinstance(obj, np.ndarray):
        out[prefix] = obj
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__} at {prefix!r}")
    return out


class WeightShapeError(ValueError):
    pass


def load_into(template, arrays: dict, prefix: str = ""):
    """Fill ``template`` in place from ``arrays``; every leaf must be present
    with exactly the template's shape.  Extra names are ignored."""
    expected = flatten(template, prefix)
    for name, ref in expected.items():
        if name not in arrays:
            raise WeightShapeError(f"weight {name!r} missing from archive")
        got = np.asarray(arrays[name])
        if got.shape != ref.shape:
            raise WeightShapeError(f"weight {name!r} has shape {got.shape}, expected {ref.shape}")
        ref[...] = got.astype(DTYPE)
    return template

