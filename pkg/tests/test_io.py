import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from dualprop import io


@settings(max_examples=20)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 1000))
def test_flo_round_trip(tmp_path_factory, h, w, seed):
    flow = np.random.default_rng(seed).normal(0, 10, (h, w, 2)).astype(np.float32)
    path = tmp_path_factory.mktemp("flo") / "a.flo"
    io.write_flo(path, flow)
    assert np.array_equal(io.read_flo(path), flow)
    assert path.stat().st_size == 12 + 8 * h * w


def test_flo_errors(tmp_path):
    good = tmp_path / "g.flo"
    io.write_flo(good, np.zeros((3, 4, 2)))
    data = good.read_bytes()
    cases = {
        "bad_magic": b"XXXX" + data[4:],
        "truncated": data[:-3],
        "shape_mismatch": data + b"\0" * 8,
    }
    for code, payload in cases.items():
        p = tmp_path / f"{code}.flo"
        p.write_bytes(payload)
        with pytest.raises(io.FormatError) as exc:
            io.read_flo(p)
        assert exc.value.code == code
    short = tmp_path / "s.flo"
    short.write_bytes(data[:8])
    with pytest.raises(io.TruncatedFileError):
        io.read_flo(short)
    neg = tmp_path / "n.flo"
    neg.write_bytes(struct.pack("<fii", io.FLO_MAGIC, -1, 2))
    with pytest.raises(io.ShapeMismatchError):
        io.read_flo(neg)
    with pytest.raises(io.ShapeMismatchError):
        io.write_flo(tmp_path / "x.flo", np.zeros((2, 2, 3)))


def test_pfm_round_trip(tmp_path, rng):
    for shape in ((5, 7, 3), (4, 6)):
        img = rng.random(shape).astype(np.float32)
        io.write_pfm(tmp_path / "a.pfm", img)
        assert np.array_equal(io.read_pfm(tmp_path / "a.pfm"), img)
    (tmp_path / "b.pfm").write_bytes(b"P6\n1 1\n-1\n\0\0\0\0")
    with pytest.raises(io.BadMagicError):
        io.read_pfm(tmp_path / "b.pfm")
    (tmp_path / "c.pfm").write_bytes(b"Pf\n2 2\n-1\n\0\0\0\0")
    with pytest.raises(io.TruncatedFileError):
        io.read_pfm(tmp_path / "c.pfm")


def test_png_round_trip(tmp_path, rng):
    img = np.round(rng.random((5, 6, 3)) * 255) / 255
    io.write_png(tmp_path / "a.png", img)
    assert np.abs(io.read_png(tmp_path / "a.png") - img).max() < 1e-12


def test_mask_threshold(tmp_path):
    arr = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "m.png")
    assert io.read_mask_png(tmp_path / "m.png").tolist() == [[False, False, True, True]]
    io.write_mask_png(tmp_path / "w.png", np.array([[True, False]]))
    assert io.read_mask_png(tmp_path / "w.png").tolist() == [[True, False]]


def test_archive_round_trip_and_errors(tmp_path, rng):
    arrays = {"a.w": rng.random((2, 3)).astype(np.float32), "b": np.float32(rng.random(4)),
              "scalar": np.array(1.5, np.float32)}
    p = tmp_path / "w.bin"
    io.write_archive(p, arrays)
    back = io.read_archive(p)
    assert list(back) == list(arrays)
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)
    data = p.read_bytes()
    for payload, err in ((b"NOPE" + data[4:], io.BadMagicError),
                         (data[:-1], io.TruncatedFileError),
                         (data + b"\0", io.ShapeMismatchError)):
        p.write_bytes(payload)
        with pytest.raises(err):
            io.read_archive(p)


def test_sequence_layout(tmp_path, rng):
    frames = np.round(rng.random((3, 8, 8, 3)) * 255) / 255
    masks = rng.random((3, 8, 8)) < 0.3
    flows = rng.normal(size=(2, 8, 8, 2)).astype(np.float32)
    io.write_sequence(tmp_path / "s", frames, masks, flows, -flows)
    seq = io.read_sequence(tmp_path / "s")
    assert np.abs(seq["frames"] - frames).max() < 1e-12
    assert np.array_equal(seq["masks"], masks)
    assert np.array_equal(seq["flows_fwd"], flows) and np.array_equal(seq["flows_bwd"], -flows)
    (tmp_path / "s" / "flows" / "fwd_00001.flo").unlink()
    with pytest.raises(io.ShapeMismatchError):
        io.read_sequence(tmp_path / "s")
    with pytest.raises(FileNotFoundError):
        io.read_frames(tmp_path)
    with pytest.raises(ValueError):
        io.write_sequence(tmp_path / "t", frames, fmt="jpg")
