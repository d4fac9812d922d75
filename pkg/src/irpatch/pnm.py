"""Binary PGM (P5) and PBM (P4) reading and writing.

Intensities in [0, 1] are stored as ``round(255 * v)``.  In a PBM file a set
bit means black, which we map to mask value 1.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import DimensionError, PreconditionError
from .imgcore import is_binary

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(buf: bytes, ntokens: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < ntokens:
        m = _HEADER_TOKEN.match(buf, pos)
        if m is None:
            raise ValueError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def to_bytes(grid) -> np.ndarray:
    a = np.asarray(grid, dtype=np.float64)
    return np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, grid) -> None:
    a = np.asarray(grid)
    if a.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D grid, got shape {a.shape}")
    h, w = a.shape
    try:
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(to_bytes(a).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PGM {os.fspath(path)}: {exc.strerror}") from exc


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM and return float intensities in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), start = _parse_header(buf, 4)
    if magic != b"P5":
        raise ValueError(f"{os.fspath(path)}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval < 256:
        raw = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=start)
    else:
        raw = np.frombuffer(buf, dtype=">u2", count=w * h, offset=start)
    return raw.reshape(h, w).astype(np.float64) / maxval


def write_pbm(path, grid) -> None:
    a = np.asarray(grid)
    if a.ndim != 2:
        raise DimensionError(f"PBM needs a 2-D grid, got shape {a.shape}")
    if not is_binary(a):
        raise PreconditionError("PBM output requires a binary mask")
    h, w = a.shape
    packed = np.packbits(a.astype(np.uint8), axis=1)
    try:
        with open(path, "wb") as fh:
            fh.write(b"P4\n%d %d\n" % (w, h))
            fh.write(packed.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PBM {os.fspath(path)}: {exc.strerror}") from exc


def read_pbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h), start = _parse_header(buf, 3)
    if magic != b"P4":
        raise ValueError(f"{os.fspath(path)}: not a binary PBM (magic {magic!r})")
    w, h = int(w), int(h)
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(buf, dtype=np.uint8, count=row_bytes * h, offset=start)
    bits = np.unpackbits(raw.reshape(h, row_bytes), axis=1)[:, :w]
    return bits.astype(np.float64)
