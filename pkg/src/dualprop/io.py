"""File formats: Middlebury ``.flo``, PNG/PFM frames, PNG masks, weight archives,
and the on-disk layout of a sequence directory."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25
ARCHIVE_MAGIC = b"DPWA"
ARCHIVE_VERSION = 1
MASK_THRESHOLD = 127


class FormatError(Exception):
    """Malformed file.  ``code`` names the failure."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class TruncatedFileError(FormatError):
    code = "truncated"


class ShapeMismatchError(FormatError):
    code = "shape_mismatch"


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeMismatchError(f"flow must have shape (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(flow.tobytes(order="C"))


def read_flo(path) -> np.ndarray:
    """Read a ``.flo`` file into a float32 ``(H, W, 2)`` array of ``(u, v)``."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: header needs 12 bytes, file has {len(data)}")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise BadMagicError(f"{path}: bad .flo magic {magic!r}")
    if w <= 0 or h <= 0:
        raise ShapeMismatchError(f"{path}: invalid dims {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(data)}")
    if len(data) > need:
        raise ShapeMismatchError(f"{path}: {len(data) - need} trailing bytes after {w}x{h} flow")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).copy()


def write_pfm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype="<f4")
    color = img.ndim == 3 and img.shape[2] == 3
    if not color and img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if not color and img.ndim != 2:
        raise ShapeMismatchError(f"PFM stores 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if color else b"Pf\n")
        fh.write(f"{w} {h}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise TruncatedFileError(f"{path}: incomplete PFM header")
    kind, dims, scale, payload = parts
    if kind not in (b"PF", b"Pf"):
        raise BadMagicError(f"{path}: bad PFM magic {kind!r}")
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    channels = 3 if kind == b"PF" else 1
    need = 4 * w * h * channels
    if len(payload) < need:
        raise TruncatedFileError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(payload[:need], dtype=dtype).astype(np.float32)
    img = img.reshape((h, w, 3) if channels == 3 else (h, w))[::-1]
    return np.ascontiguousarray(img)


def write_png(path, img: np.ndarray) -> None:
    """Write an image in [0, 1] as 8-bit PNG (RGB or grayscale)."""
    img = np.asarray(img, dtype=np.float64)
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[..., 0]
    Image.fromarray(q).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float64) / 255.0


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(
        path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    """Grayscale mask; values above 127 are masked."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr > MASK_THRESHOLD


def write_archive(path, arrays: dict) -> None:
    """Write named float32 arrays: a small header per entry plus little-endian data."""
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<II", ARCHIVE_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_archive(path) -> dict:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"{path}: archive ends at byte {len(data)}, needed {pos + n}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != ARCHIVE_MAGIC:
        raise BadMagicError(f"{path}: not a weight archive")
    version, count = struct.unpack("<II", take(8))
    if version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = take(n).decode("utf-8")
        dtype, ndim = struct.unpack("<BB", take(2))
        if dtype != 0:
            raise FormatError(f"{path}: entry {name!r} has unknown dtype code {dtype}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise ShapeMismatchError(f"{path}: {len(data) - pos} trailing bytes after {count} entries")
    return out


# sequence directory layout -------------------------------------------------

def _frame_name(t: int, ext: str) -> str:
    return f"{t:05d}.{ext}"


def write_sequence(out_dir, frames, masks=None, flows_fwd=None, flows_bwd=None,
                   fmt: str = "png") -> Path:
    """Write ``frames/``, ``masks/`` and ``flows/`` under ``out_dir``."""
    if fmt not in ("png", "pfm"):
        raise ValueError(f"unknown frame format {fmt!r}")
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        path = out / "frames" / _frame_name(t, fmt)
        (write_png if fmt == "png" else write_pfm)(path, frame)
    if masks is not None:
        (out / "masks").mkdir(exist_ok=True)
        for t, m in enumerate(masks):
            write_mask_png(out / "masks" / _frame_name(t, "png"), m)
    for label, flows in (("fwd", flows_fwd), ("bwd", flows_bwd)):
        if flows is None:
            continue
        (out / "flows").mkdir(exist_ok=True)
        for t, f in enumerate(flows):
            write_flo(out / "flows" / f"{label}_{t:05d}.flo", f)
    return out


def read_frames(directory) -> np.ndarray:
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.suffix in (".png", ".pfm"))
    if not paths:
        raise FileNotFoundError(f"no .png or .pfm frames in {directory}")
    frames = [read_png(p) if p.suffix == ".png" else read_pfm(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"frames in {directory} have differing shapes {sorted(shapes)}")
    return np.stack(frames).astype(np.float64)


def read_sequence(seq_dir) -> dict:
    """Read a sequence directory; missing ``masks/`` or ``flows/`` give ``None``."""
    seq_dir = Path(seq_dir)
    out = {"frames": read_frames(seq_dir / "frames"), "masks": None,
           "flows_fwd": None, "flows_bwd": None}
    n, h, w = out["frames"].shape[:3]
    mask_dir = seq_dir / "masks"
    if mask_dir.is_dir():
        masks = np.stack([read_mask_png(p) for p in sorted(mask_dir.glob("*.png"))])
        if masks.shape != (n, h, w):
            raise ShapeMismatchError(f"masks {masks.shape} do not match frames {(n, h, w)}")
        out["masks"] = masks
    flow_dir = seq_dir / "flows"
    if flow_dir.is_dir():
        for label in ("fwd", "bwd"):
            paths = sorted(flow_dir.glob(f"{label}_*.flo"))
            if not paths:
                continue
            flows = np.stack([read_flo(p) for p in paths]).astype(np.float64)
            if flows.shape != (n - 1, h, w, 2):
                raise ShapeMismatchError(
                    f"{label} flows {flows.shape} do not match frames, expected {(n - 1, h, w, 2)}")
            out[f"flows_{label}"] = flows
    return out
