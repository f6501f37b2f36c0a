import numpy as np
import pytest

from dualprop import io
from dualprop.config import PipelineConfig
from dualprop.pipeline import (_blend_weights, clip_ranges, complete_flows, cost_summary,
                               laplacian_fill_frames, random_archive, run_pipeline)
from dualprop.synth import SceneSpec, corrupt, gen_masks, gen_sequence
from dualprop.weights import WeightShapeError

SMALL = PipelineConfig(mode="weighted", channels=8, token_channels=8, heads=2, num_blocks=2,
                       flow_channels=8, local_length=3, clip_length=4)


def case(seed=0, t=6, h=32, w=48, velocity=(1, 1), kind="object"):
    spec = SceneSpec(seed=seed, T=t, H=h, W=w, velocity=velocity)
    seq = gen_sequence(spec)
    masks = gen_masks(spec, kind, seed=seed, coverage=0.1)
    frames, fwd, bwd = corrupt(seq.frames, masks, seq.flows_fwd, seq.flows_bwd)
    return seq, frames, masks, fwd, bwd


@pytest.fixture(scope="module")
def archive():
    return random_archive(SMALL, seed=1)


def test_clip_ranges_cover_with_half_overlap():
    assert clip_ranges(5, 20) == [(0, 5)]
    assert clip_ranges(20, 10) == [(0, 10), (5, 15), (10, 20)]
    assert clip_ranges(23, 10)[-1] == (13, 23)
    for n in range(2, 40):
        covered = np.zeros(n, int)
        for a, b in clip_ranges(n, 8):
            covered[a:b] += 1
        assert covered.min() >= 1


def test_blend_weights_positive_and_flat_at_ends():
    w = _blend_weights(0, 10, 20)
    assert (w > 0).all() and w[0] == w.max()
    w = _blend_weights(5, 15, 20)
    assert w[0] < w[4] and w[-1] < w[5]


def test_propagation_only_contract():
    seq, frames, masks, fwd, bwd = case(3)
    out, diag, m_hat = run_pipeline(frames, masks, fwd, bwd, return_masks=True)
    assert np.array_equal(out[~masks], seq.frames[~masks])
    filled = masks & ~m_hat
    assert np.abs(out[filled] - seq.frames[filled]).max() < 1e-9
    assert diag["active_windows"] == [] and diag["flow_completion"] == "laplacian"
    assert diag["filled_by_propagation"] == filled.sum()
    assert np.isfinite(out).all() and out.min() >= 0 and out.max() <= 1


def test_empty_masks_identity(archive):
    seq, *_ = case(1)
    empty = np.zeros(seq.frames.shape[:3], bool)
    for cfg, w in ((PipelineConfig(), None), (SMALL, archive)):
        out, diag = run_pipeline(seq.frames, empty, seq.flows_fwd, seq.flows_bwd, cfg, w)
        assert np.array_equal(out, seq.frames)
    assert all(a == 0 for clip in diag["active_windows"] for a in clip)


def test_weighted_mode(archive):
    seq, frames, masks, fwd, bwd = case(2)
    out, diag = run_pipeline(frames, masks, fwd, bwd, SMALL, archive)
    assert diag["flow_completion"] == "rfc"
    assert len(diag["active_windows"]) == len(clip_ranges(6, 4))
    assert all(len(c) == SMALL.num_blocks for c in diag["active_windows"])
    assert np.array_equal(out[~masks], seq.frames[~masks])
    assert np.isfinite(out).all()
    again, _ = run_pipeline(frames, masks, fwd, bwd, SMALL, archive)
    assert np.array_equal(out, again)


def test_weighted_needs_weights(archive):
    _, frames, masks, fwd, bwd = case(2)
    with pytest.raises(WeightShapeError):
        run_pipeline(frames, masks, fwd, bwd, SMALL)
    rfc_only = {k: v for k, v in archive.items() if k.startswith("rfc.")}
    with pytest.raises(WeightShapeError):
        run_pipeline(frames, masks, fwd, bwd, SMALL, rfc_only)
    bad = dict(archive)
    key = next(k for k in bad if k.startswith("inpaint."))
    bad[key] = np.zeros((1, 2, 3))
    with pytest.raises(WeightShapeError):
        run_pipeline(frames, masks, fwd, bwd, SMALL, bad)


def test_archive_round_trip_through_file(archive, tmp_path):
    io.write_archive(tmp_path / "w.bin", archive)
    back = io.read_archive(tmp_path / "w.bin")
    _, frames, masks, fwd, bwd = case(4)
    a, _ = run_pipeline(frames, masks, fwd, bwd, SMALL, back)
    assert np.isfinite(a).all()


def test_input_validation():
    _, frames, masks, fwd, bwd = case(0)
    with pytest.raises(ValueError):
        run_pipeline(frames[..., :2], masks, fwd, bwd)
    with pytest.raises(ValueError):
        run_pipeline(frames, masks[:-1], fwd, bwd)
    with pytest.raises(ValueError):
        run_pipeline(frames, masks, fwd[:-1], bwd)


def test_laplacian_fill_frames_handles_full_masks():
    frames = np.stack([np.full((4, 4, 3), v) for v in (0.2, 0.4, 0.6)])
    masks = np.zeros((3, 4, 4), bool)
    masks[1] = True
    out = laplacian_fill_frames(frames, masks)
    assert np.array_equal(out[1], frames[0])
    out = laplacian_fill_frames(frames, np.ones((3, 4, 4), bool))
    assert np.all(out == 0.5)


def test_complete_flows_keeps_known_vectors(rng):
    fwd, bwd = rng.normal(size=(2, 3, 8, 8, 2))
    masks = rng.random((4, 8, 8)) < 0.2
    cf, cb = complete_flows(fwd, bwd, masks)
    for t in range(3):
        assert np.array_equal(cf[t][~masks[t]], fwd[t][~masks[t]])
        assert np.array_equal(cb[t][~masks[t + 1]], bwd[t][~masks[t + 1]])


def test_cost_summary():
    masks = np.zeros((10, 240, 432), bool)
    assert cost_summary(PipelineConfig(), 240, 432, masks)["sparse_attention_gflops"] == 0
    masks[:, 100:120, 200:220] = True
    s = cost_summary(PipelineConfig(), 240, 432, masks)
    assert 0 < s["mask_ratio"] < 1
    assert s["sparse_gflops_per_block"] < s["dense_gflops_per_block"]
