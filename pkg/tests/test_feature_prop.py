import numpy as np
import pytest

from dualprop.feature_prop import (bidirectional, decode_features, downsample_conditions,
                                   encode_frames, feature_propagate_bidir)
from dualprop.flow import warp_backward
from dualprop.grid import Kernel, resize
from dualprop.weights import (DecoderWeights, FeaturePropWeights, init_feature_prop,
                              init_frame_decoder, init_frame_encoder)

import oracles
from test_align import centre_tap, degenerate_weights, pass_through


def encoder_oracle(frame, mask, enc):
    h = np.concatenate([frame, mask[..., None].astype(float)], -1)
    for i, (k, s) in enumerate(zip(enc.layers, enc.strides)):
        h = oracles.conv2d(h, k.weight, k.bias, s, (k.size[0] - 1) // 2)
        if i < len(enc.layers) - 1:
            h = np.maximum(h, 0)
    return h


def test_encoder_shape_and_oracle(rng):
    enc = init_frame_encoder(rng, 8)
    frames = rng.random((2, 8, 12, 3))
    masks = rng.random((2, 8, 12)) < 0.3
    out = encode_frames(frames, masks, enc)
    assert out.shape == (2, 2, 3, 8)
    assert np.abs(out[1] - encoder_oracle(frames[1], masks[1], enc)).max() < 1e-5


def test_encoder_identical_frames_identical_features(rng):
    enc = init_frame_encoder(rng, 8)
    f = rng.random((8, 8, 3))
    m = np.zeros((8, 8), bool)
    out = encode_frames([f, f], [m, m], enc)
    assert np.array_equal(out[0], out[1])


def test_encoder_rejects_indivisible(rng):
    with pytest.raises(ValueError):
        encode_frames([np.zeros((10, 8, 3))], [np.zeros((10, 8))], init_frame_encoder(rng, 8))


def test_decoder_shape_oracle_and_roundtrip(rng):
    enc, dec = init_frame_encoder(rng, 8), init_frame_decoder(rng, 8)
    frames = rng.random((2, 12, 16, 3))
    feats = encode_frames(frames, np.zeros((2, 12, 16)), enc)
    out = decode_features(feats, dec)
    assert out.shape == frames.shape
    assert out.min() >= 0 and out.max() <= 1
    h = feats[0]
    for i, k in enumerate(dec.layers):
        h = oracles.conv2d(resize(h, 2, mode="bilinear"), k.weight, k.bias, 1, 1)
        if i < len(dec.layers) - 1:
            h = np.maximum(h, 0)
    assert np.abs(out[0] - np.clip(h, 0, 1)).max() < 1e-5


def test_decoder_clamps():
    dec = DecoderWeights([Kernel(np.zeros((3, 1, 1, 1)), np.array([-0.2, 1.3, 0.4]))])
    out = decode_features(np.zeros((1, 2, 2, 1)), dec)
    assert np.allclose(out[0, ..., 0], 0.0) and np.allclose(out[0, ..., 1], 1.0)
    assert np.allclose(out[0, ..., 2], 0.4)


def identity_chain_weights(c):
    a = degenerate_weights(c, 2 * c + 5, centre_tap(c), pass_through(c, "first"))
    return FeaturePropWeights(backward=a, forward=a, fuse=Kernel(pass_through(c, "first")))


def conditions(n, h, w, flow):
    return dict(flows_fwd=[flow] * (n - 1), flows_bwd=[-flow] * (n - 1),
                valid_fwd=[np.ones((h, w))] * (n - 1), valid_bwd=[np.ones((h, w))] * (n - 1),
                masks=[np.zeros((h, w))] * n, masks_updated=[np.zeros((h, w))] * n)


def test_degenerate_identity_chain(rng):
    c, n, h, w = 2, 4, 6, 9
    e = rng.random((n, h, w, c))
    flow = np.zeros((h, w, 2))
    flow[..., 0] = 1.0
    out = feature_propagate_bidir(e, w=identity_chain_weights(c), **conditions(n, h, w, flow))
    expect = e[n - 1]
    assert np.array_equal(out[n - 1], e[n - 1])
    for t in range(n - 2, -1, -1):
        expect = warp_backward(expect, flow)
        assert np.abs(out[t] - expect).max() < 1e-9


def test_two_frame_clip_runs_one_alignment_each(rng):
    calls = []

    def back(t, nxt):
        calls.append(("b", t))
        return nxt

    def fwd(t, prev):
        calls.append(("f", t))
        return prev

    feats = rng.random((2, 3, 3, 2))
    out = bidirectional(feats, back, fwd, Kernel(pass_through(2, "second")))
    assert calls == [("b", 0), ("f", 1)]
    assert np.array_equal(out[1], feats[0])


def test_locality_and_determinism(rng):
    c, n, h, w = 4, 3, 6, 6
    wts = init_feature_prop(rng, c)
    e = rng.random((n, h, w, c))
    cond = conditions(n, h, w, rng.normal(size=(h, w, 2)))
    a = feature_propagate_bidir(e, w=wts, **cond)
    b = feature_propagate_bidir(e.copy(), w=wts, **cond)
    assert np.array_equal(a, b) and a.shape == e.shape and np.isfinite(a).all()


def test_condition_lengths(rng):
    c = 2
    e = rng.random((3, 4, 4, c))
    cond = conditions(3, 4, 4, np.zeros((4, 4, 2)))
    cond["masks"] = cond["masks"][:2]
    with pytest.raises(ValueError):
        feature_propagate_bidir(e, w=identity_chain_weights(c), **cond)
    with pytest.raises(ValueError):
        bidirectional(e[:1], None, None, Kernel(pass_through(c, "first")))


def test_downsample_conditions(rng):
    f = np.full((2, 16, 20, 2), 4.0)
    m = np.zeros((3, 16, 20), bool)
    m[:, 4:8, 8:12] = True
    out = downsample_conditions(f, -f, m, m)
    assert out["flows_fwd"][0].shape == (4, 5, 2)
    assert np.allclose(out["flows_fwd"][0], 1.0)
    assert out["masks"][0][1, 2] == 1 and out["masks"][0].sum() == 1
    assert np.all(out["valid_fwd"][0] == 1) and np.all(out["valid_bwd"][0] == 1)
