"""Model checkpoint serialization.

Layout: magic ``DFCK``, format version (u32), parameter count (u32),
then per parameter: name (u32 byte length + UTF-8), shape (4 x u32),
raw little-endian float32 payload in C order.  Writes go to a temp file
in the target directory followed by an atomic rename, so readers never
observe a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Mapping

import numpy as np

from .autodiff import Parameter
from .errors import CheckpointFormatError

MAGIC = b"DFCK"
VERSION = 1

_U32 = struct.Struct("<I")


def _read_u32(buf: bytes, offset: int, what: str) -> tuple[int, int]:
    if offset + 4 > len(buf):
        raise CheckpointFormatError(f"truncated checkpoint: missing {what}")
    return _U32.unpack_from(buf, offset)[0], offset + 4


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, Parameter]) -> None:
    """Write named parameters in insertion order."""
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(params))]
    for name, param in params.items():
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        arr = param.value.data
        for dim in arr.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(chunks)

    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".dfck.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a checkpoint back as name -> float32 array, in file order."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint: {exc}") from exc

    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointFormatError("bad magic: not a DFCK checkpoint")
    offset = 4
    version, offset = _read_u32(buf, offset, "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    count, offset = _read_u32(buf, offset, "parameter count")

    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len, offset = _read_u32(buf, offset, f"name length of entry {i}")
        if offset + name_len > len(buf):
            raise CheckpointFormatError(f"truncated checkpoint: name of entry {i}")
        try:
            name = buf[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"entry {i} name is not valid UTF-8") from exc
        offset += name_len
        shape = []
        for axis in ("batch", "channels", "height", "width"):
            dim, offset = _read_u32(buf, offset, f"{axis} of '{name}'")
            shape.append(dim)
        numel = int(np.prod(shape, dtype=np.int64))
        nbytes = numel * 4
        if offset + nbytes > len(buf):
            raise CheckpointFormatError(f"truncated checkpoint: payload of '{name}'")
        arr = np.frombuffer(buf, dtype="<f4", count=numel, offset=offset).reshape(shape)
        offset += nbytes
        if name in out:
            raise CheckpointFormatError(f"duplicate parameter name '{name}'")
        if not np.all(np.isfinite(arr)):
            raise CheckpointFormatError(f"parameter '{name}' contains non-finite values")
        out[name] = arr.astype(np.float32)
    if offset != len(buf):
        raise CheckpointFormatError(f"{len(buf) - offset} trailing bytes after last parameter")
    return out


def restore_into(params: Mapping[str, Parameter], loaded: Mapping[str, np.ndarray]) -> None:
    """Copy loaded values into an existing parameter set, validating shapes."""
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise CheckpointFormatError(
            f"parameter set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    for name, param in params.items():
        arr = loaded[name]
        if tuple(arr.shape) != tuple(param.shape):
            raise CheckpointFormatError(
                f"shape mismatch for '{name}': checkpoint {arr.shape}, model {param.shape}"
            )
        param.value.data[...] = arr
