"""Portable graymap (PGM) reading and writing, intensities mapped to [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .imgcore import as_image


def _tokens(data: bytes, count: int, pos: int):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise InvalidInputError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 graymap (maxval up to 65535) as float64 in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InvalidInputError(f"{path}: not a PGM file")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536 or w <= 0 or h <= 0:
        raise InvalidInputError(f"{path}: bad PGM header")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = ">u2" if maxval > 255 else "u1"
        raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    else:
        vals, _ = _tokens(data, w * h, pos)
        raster = np.array([int(v) for v in vals])
    return raster.reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, img, maxval: int = 65535) -> None:
    """Write ``img`` (clipped to [0, 1]) as a binary P5 graymap."""
    x = np.clip(as_image(img), 0.0, 1.0)
    if maxval not in (255, 65535):
        raise InvalidInputError("maxval must be 255 or 65535")
    q = np.rint(x * maxval).astype(">u2" if maxval > 255 else "u1")
    h, w = x.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.tobytes())
