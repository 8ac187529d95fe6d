"""Dataset readers, image-grid and SVG writers, and the checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"CPOE" | u32 version | u32 section count
    per section: u32 name length | ASCII name | u32 rank | u64 extent * rank
                 | float64 payload (little-endian, row-major)
    u64 checksum: first 8 bytes of BLAKE2b over everything before it
"""

from __future__ import annotations

import gzip
import hashlib
import struct
import warnings
from pathlib import Path

import numpy as np

from .routing import DiagramModel

IDX_IMAGE_MAGIC = 0x00000803
CIFAR_RECORD = 3073
CHECKPOINT_MAGIC = b"CPOE"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed dataset or checkpoint file."""


class BadMagicError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class DimensionMismatchError(DataFormatError):
    pass


class RecordSizeError(DataFormatError):
    pass


class ChecksumError(DataFormatError):
    pass


class VersionError(DataFormatError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


# ---------------------------------------------------------------------------
# IDX / CIFAR


def load_idx(path, expected_shape=None) -> np.ndarray:
    """Read an IDX unsigned-byte image file (optionally gzipped) as ``[n, rows, cols]`` in [0, 1]."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedPayloadError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    header = 4 + 4 * 3
    if len(raw) < header:
        raise TruncatedPayloadError(f"{path}: header truncated")
    dims = struct.unpack(">III", raw[4:header])
    size = int(np.prod(dims))
    payload = len(raw) - header
    if payload < size:
        raise TruncatedPayloadError(f"{path}: {payload} payload bytes, header promises {size}")
    if payload > size:
        raise DimensionMismatchError(f"{path}: {payload - size} bytes beyond the declared dimensions {dims}")
    if expected_shape is not None and tuple(dims[1:]) != tuple(expected_shape):
        raise DimensionMismatchError(f"{path}: images are {dims[1:]}, expected {tuple(expected_shape)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    return data.astype(np.float64) / 255.0


def write_idx(path, images) -> None:
    """Write ``[n, rows, cols]`` uint8 images as an uncompressed IDX file."""
    arr = np.asarray(images)
    if arr.ndim != 3 or arr.dtype != np.uint8:
        raise ValueError("IDX writer expects a [n, rows, cols] uint8 array")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *arr.shape))
        fh.write(arr.tobytes())


def load_cifar10(path) -> np.ndarray:
    """Read CIFAR-10 binary batches as ``[n, 32, 32, 3]`` in [0, 1].

    ``path`` may be one batch file or a directory of ``data_batch_*.bin``.
    """
    path = Path(path)
    files = sorted(path.glob("data_batch_*.bin")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 batch files under {path}")
    out = []
    for f in files:
        raw = f.read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise RecordSizeError(f"{f}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        out.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    return np.concatenate(out).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# image grids


def quantize(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def image_grid(images, rows: int, cols: int, separator: int = 255) -> np.ndarray:
    """Tile images row-major with 1-pixel separators and border -> uint8 ``[H, W, C]``."""
    imgs = [np.asarray(im, dtype=float) for im in images]
    if rows < 1 or cols < 1 or rows * cols != len(imgs):
        raise ValueError(f"{len(imgs)} images do not fill a {rows}x{cols} grid")
    imgs = [im[..., None] if im.ndim == 2 else im for im in imgs]
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs):
        raise ValueError("grid images must share one shape")
    h, w, ch = shape
    grid = np.full((rows * (h + 1) + 1, cols * (w + 1) + 1, ch), separator, dtype=np.uint8)
    for k, im in enumerate(imgs):
        r, c = divmod(k, cols)
        y, x = 1 + r * (h + 1), 1 + c * (w + 1)
        grid[y:y + h, x:x + w] = quantize(im)
    return grid


def emit_image_grid(images, rows: int, cols: int, path) -> Path:
    """Write a grid as binary PGM (grayscale) or PPM (3-channel)."""
    grid = image_grid(images, rows, cols)
    h, w, ch = grid.shape
    if ch not in (1, 3):
        raise ValueError(f"cannot encode {ch}-channel images as PGM/PPM")
    tag = b"P5" if ch == 1 else b"P6"
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(tag + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())
    return path


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by :func:`emit_image_grid` -> uint8 ``[H, W, C]``."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"P5", b"P6") or parts[2] != b"255":
        raise BadMagicError(f"{path}: not a binary 8-bit PGM/PPM")
    w, h = (int(v) for v in parts[1].split())
    ch = 1 if parts[0] == b"P5" else 3
    body = parts[3]
    if len(body) != w * h * ch:
        raise TruncatedPayloadError(f"{path}: pixel payload has {len(body)} bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, ch)


# ---------------------------------------------------------------------------
# routing diagram


def _gray(shade: float) -> str:
    v = int(round(255 * (1.0 - min(max(shade, 0.0), 1.0))))
    return f"#{v:02x}{v:02x}{v:02x}"


def routing_svg(diagram: DiagramModel, width: float | None = None) -> str:
    """Standalone SVG 1.1: upper-layer capsules on top, lower layer below."""
    n_lo, n_up = len(diagram.lower), len(diagram.upper)
    width = width or max(600.0, 6.0 * max(n_lo, n_up))
    margin, rect_h, gap = 10.0, 24.0, 220.0
    height = 2 * margin + 2 * rect_h + gap
    step_lo = (width - 2 * margin) / max(n_lo, 1)
    step_up = (width - 2 * margin) / max(n_up, 1)
    y_up, y_lo = margin, margin + rect_h + gap

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.1f}" height="{height:.1f}" viewBox="0 0 {width:.1f} {height:.1f}">',
        f'<rect x="0" y="0" width="{width:.1f}" height="{height:.1f}" fill="#ffffff"/>',
        '<g id="edges" stroke-width="0.6">',
    ]
    for i, j, shade in diagram.edges:
        x1 = margin + (i + 0.5) * step_lo
        x2 = margin + (j + 0.5) * step_up
        out.append(f'<line x1="{x1:.2f}" y1="{y_lo:.2f}" x2="{x2:.2f}" y2="{y_up + rect_h:.2f}" '
                   f'stroke="{_gray(shade)}"/>')
    out.append("</g>")
    for name, acts, step, y in (("lower", diagram.lower, step_lo, y_lo),
                                ("upper", diagram.upper, step_up, y_up)):
        out.append(f'<g id="{name}" stroke="#000000" stroke-width="0.3">')
        w = max(step * 0.8, 0.5)
        for k, a in enumerate(acts):
            x = margin + k * step + (step - w) / 2
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{rect_h:.2f}" '
                       f'fill="{_gray(float(a))}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_routing_svg(diagram: DiagramModel, path) -> Path:
    path = Path(path)
    path.write_text(routing_svg(diagram), encoding="ascii")
    return path


# ---------------------------------------------------------------------------
# checkpoints


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode_checkpoint(sections: dict) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(sections))]
    for name, value in sections.items():
        try:
            bname = name.encode("ascii")
        except UnicodeEncodeError:
            raise ValueError(f"section name {name!r} is not ASCII") from None
        arr = np.asarray(value, dtype="<f8", order="C")
        parts.append(struct.pack("<I", len(bname)) + bname)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def save_checkpoint(sections: dict, path) -> Path:
    """Write named float64 tensors; the dict order is preserved on load."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(sections))
    tmp.replace(path)
    return path


def decode_checkpoint(raw: bytes, known=None, source: str = "checkpoint") -> dict:
    if len(raw) < 20 or raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{source}: not a CPOE checkpoint")
    body, tail = raw[:-8], raw[-8:]
    if _checksum(body) != tail:
        raise ChecksumError(f"{source}: checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{source}: format version {version}, expected {CHECKPOINT_VERSION}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + n].decode("ascii")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", body, pos)
            shape = struct.unpack_from(f"<{rank}Q", body, pos + 4)
            pos += 4 + 8 * rank
            nbytes = 8 * int(np.prod(shape))
            if pos + nbytes > len(body):
                raise TruncatedPayloadError(f"{source}: section {name!r} truncated")
            arr = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape)
            pos += nbytes
            if known is not None and name not in known:
                warnings.warn(f"{source}: skipping unknown section {name!r}", stacklevel=3)
                continue
            out[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise TruncatedPayloadError(f"{source}: {exc}") from None
    if pos != len(body):
        raise DimensionMismatchError(f"{source}: {len(body) - pos} trailing bytes")
    return out


def load_checkpoint(path, known=None) -> dict:
    """Read and verify a checkpoint; names outside ``known`` warn and are dropped."""
    return decode_checkpoint(Path(path).read_bytes(), known=known, source=str(path))


def text_to_tensor(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def tensor_to_text(arr) -> str:
    return bytes(np.asarray(arr).astype(np.uint8)).decode("utf-8")
