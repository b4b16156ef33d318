"""Grayscale image files: binary/ASCII PGM (8- and 16-bit) and PNG ingestion."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PgmParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _tokens(data: bytes, pos: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments.

    Returns (values, start offsets, position after the last token).
    """
    out, starts = [], []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PgmParseError("unexpected end of header", start)
        tok = data[start:pos]
        if not tok.isdigit():
            raise PgmParseError(f"expected an integer, got {tok[:16]!r}", start)
        out.append(int(tok))
        starts.append(start)
    return out, starts, pos


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Return (integer samples as uint16 array, maxval)."""
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise PgmParseError(f"bad magic {magic!r}, expected P5 or P2", 0)
    (width, height, maxval), starts, pos = _tokens(data, 2, 3)
    if width <= 0 or height <= 0:
        raise PgmParseError(f"bad dimensions {width}x{height}", starts[0] if width <= 0 else starts[1])
    if not 0 < maxval < 65536:
        raise PgmParseError(f"maxval {maxval} out of range", starts[2])
    count = width * height
    if magic == b"P2":
        vals = data[pos:].split(b"#")[0].split()
        if len(vals) < count:
            raise PgmParseError(f"expected {count} samples, found {len(vals)}", pos)
        arr = np.array([int(v) for v in vals[:count]], dtype=np.uint16)
    else:
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise PgmParseError("missing whitespace after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise PgmParseError(f"raster truncated: need {need} bytes, have {len(data) - pos}", pos)
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.uint16)
    if arr.max(initial=0) > maxval:
        raise PgmParseError(f"sample exceeds maxval {maxval}", pos)
    return arr.reshape(height, width), maxval


def encode_pgm(samples: np.ndarray, maxval: int) -> bytes:
    samples = np.asarray(samples)
    h, w = samples.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + samples.astype(dtype).tobytes()


def to_samples(image, bits: int = 16) -> tuple[np.ndarray, int]:
    maxval = 2**bits - 1
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.rint(x * maxval).astype(np.uint16), maxval


def write_pgm(path, image, bits: int = 16):
    """Write a [0, 1] image (clipped) as binary PGM."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    samples, maxval = to_samples(image, bits)
    Path(path).write_bytes(encode_pgm(samples, maxval))


def read_pgm(path) -> np.ndarray:
    samples, maxval = decode_pgm(Path(path).read_bytes())
    return samples.astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Read PGM natively or any Pillow-readable file (PNG etc.) as grayscale [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / (65535.0 if arr.max() > 255 else 255.0)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path, image):
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        write_pgm(path, image)
        return
    from PIL import Image

    samples, _ = to_samples(image, 8)
    Image.fromarray(samples.astype(np.uint8)).save(path)
