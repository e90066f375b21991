"""Minimal binary PGM (P5, maxval 255) reader/writer.

All mask and visualization I/O goes through 8-bit grayscale PGM: no
image library dependency, and the format is trivial to inspect.
"""

from __future__ import annotations

import os

import numpy as np


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a 2-D grid as binary PGM.

    Float inputs are treated as [0,1] and scaled; integer inputs must
    already be in [0,255].
    """
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D array, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.floating):
        data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    else:
        data = np.clip(arr, 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM into a uint8 (H, W) array."""
    with open(path, "rb") as fh:
        blob = fh.read()

    # header is ASCII tokens (magic, width, height, maxval) with
    # optional '#' comments; pixel data starts after one whitespace byte
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(blob):
            raise ValueError(f"{path}: truncated PGM header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            tokens.append(blob[start:pos])
    pos += 1  # single whitespace separating maxval from raster

    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if w < 1 or h < 1:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h}")
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    if len(blob) - pos < w * h:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()
