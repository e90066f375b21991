"""Teacher feature-map bundles: binary format, fusion, synthetic stand-ins.

Bundle files carry per-model feature grids at native resolution; fusion
bilinearly resizes each record to a common square resolution, optionally
z-scores it, and concatenates channels in file order. Channel layout is
order-dependent, so record order is preserved everywhere.

File layout (all integers little-endian u32): magic ``DFOM``, version 1,
record count; per record: model_id byte length + UTF-8, H, W, D, then
H*W*D little-endian float32 values in channel-major (C, H, W) order.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SegmentationSample
from .errors import BundleFormatError
from .interp import resize_bilinear_hw, resize_bilinear_hwc, resize_nearest_hw

MAGIC = b"DFOM"
VERSION = 1
MAX_MODEL_ID_BYTES = 64

_U32 = struct.Struct("<I")


@dataclass
class TeacherRecord:
    """One model's feature grid, shape (H, W, C) float32."""

    model_id: str
    feature_map: np.ndarray

    def __post_init__(self):
        raw = self.model_id.encode("utf-8")
        if not raw:
            raise BundleFormatError("model_id must be non-empty")
        if len(raw) > MAX_MODEL_ID_BYTES:
            raise BundleFormatError(f"model_id exceeds {MAX_MODEL_ID_BYTES} bytes: {self.model_id!r}")
        self.feature_map = np.asarray(self.feature_map, dtype=np.float32)
        if self.feature_map.ndim != 3:
            raise BundleFormatError(
                f"feature map must be (H, W, C), got shape {self.feature_map.shape}"
            )
        if min(self.feature_map.shape) < 1:
            raise BundleFormatError(f"zero-sized feature map: {self.feature_map.shape}")
        if not np.all(np.isfinite(self.feature_map)):
            raise BundleFormatError(f"record '{self.model_id}' contains non-finite values")


@dataclass
class TeacherBundle:
    """Records plus their fused (H', W', D*) map."""

    records: list[TeacherRecord]
    fused: np.ndarray
    d_star: int


def write_bundle(records: Sequence[TeacherRecord], path: str | os.PathLike) -> None:
    """Serialize records in order; inverse of read_records."""
    if not records:
        raise BundleFormatError("a bundle must contain at least one record")
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(records))]
    for rec in records:
        raw = rec.model_id.encode("utf-8")
        h, w, c = rec.feature_map.shape
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.extend(_U32.pack(d) for d in (h, w, c))
        payload = np.ascontiguousarray(rec.feature_map.transpose(2, 0, 1), dtype="<f4")
        chunks.append(payload.tobytes())
    blob = b"".join(chunks)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".dfom.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_u32(buf: bytes, offset: int, what: str) -> tuple[int, int]:
    if offset + 4 > len(buf):
        raise BundleFormatError(f"truncated bundle: missing {what}")
    return _U32.unpack_from(buf, offset)[0], offset + 4


def read_records(path: str | os.PathLike) -> list[TeacherRecord]:
    """Parse a bundle file without fusing."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise BundleFormatError(f"cannot read bundle: {exc}") from exc
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BundleFormatError("bad magic: not a DFOM bundle")
    offset = 4
    version, offset = _read_u32(buf, offset, "version")
    if version != VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    count, offset = _read_u32(buf, offset, "record count")
    if count == 0:
        raise BundleFormatError("bundle contains no records")

    records = []
    for i in range(count):
        id_len, offset = _read_u32(buf, offset, f"model_id length of record {i}")
        if id_len == 0 or id_len > MAX_MODEL_ID_BYTES:
            raise BundleFormatError(f"record {i} has invalid model_id length {id_len}")
        if offset + id_len > len(buf):
            raise BundleFormatError(f"truncated bundle: model_id of record {i}")
        try:
            model_id = buf[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BundleFormatError(f"record {i} model_id is not valid UTF-8") from exc
        offset += id_len
        dims = []
        for axis in ("height", "width", "channels"):
            dim, offset = _read_u32(buf, offset, f"{axis} of '{model_id}'")
            if dim == 0:
                raise BundleFormatError(f"record '{model_id}' has zero {axis}")
            dims.append(dim)
        h, w, c = dims
        numel = h * w * c
        if offset + numel * 4 > len(buf):
            raise BundleFormatError(f"truncated bundle: payload of '{model_id}'")
        payload = np.frombuffer(buf, dtype="<f4", count=numel, offset=offset)
        offset += numel * 4
        fmap = payload.reshape(c, h, w).transpose(1, 2, 0)
        if not np.all(np.isfinite(fmap)):
            raise BundleFormatError(f"record '{model_id}' contains non-finite values")
        records.append(TeacherRecord(model_id=model_id, feature_map=fmap.astype(np.float32)))
    if offset != len(buf):
        raise BundleFormatError(f"{len(buf) - offset} trailing bytes after last record")
    return records


def _zscore(fmap: np.ndarray) -> np.ndarray:
    # constant records pass through untouched (z-score undefined there)
    std = float(fmap.std())
    if std == 0.0:
        return fmap
    return (fmap - float(fmap.mean())) / std


def fuse_records(
    records: Sequence[TeacherRecord], target_resolution: int, normalize: bool = True
) -> TeacherBundle:
    """Resize each record to target x target, optionally z-score, concat."""
    if not records:
        raise BundleFormatError("cannot fuse an empty record list")
    if target_resolution < 2:
        raise BundleFormatError(f"target resolution must be >= 2, got {target_resolution}")
    parts = []
    for rec in records:
        fmap = rec.feature_map.astype(np.float64)
        if fmap.shape[:2] != (target_resolution, target_resolution):
            fmap = resize_bilinear_hwc(fmap, target_resolution, target_resolution)
        if normalize:
            fmap = _zscore(fmap)
        parts.append(fmap)
    fused = np.concatenate(parts, axis=2)
    return TeacherBundle(records=list(records), fused=fused, d_star=fused.shape[2])


def load_bundle(
    path: str | os.PathLike, target_resolution: int, normalize: bool = True
) -> TeacherBundle:
    """Read a bundle file and fuse it at the given common resolution."""
    return fuse_records(read_records(path), target_resolution, normalize)


@dataclass(frozen=True)
class SynthTeacherSpec:
    """Shape of the fake teacher ensemble used in desk-scale runs."""

    channels_per_model: tuple[int, ...] = (4, 4, 4, 4)
    sigma: float = 0.1
    native_resolution: int = 16
    target_resolution: int = 16
    normalize: bool = True

    def __post_init__(self):
        if not self.channels_per_model:
            raise BundleFormatError("need at least one pseudo-model")
        if any(c < 1 for c in self.channels_per_model):
            raise BundleFormatError("every pseudo-model needs >= 1 channel")
        if self.sigma < 0:
            raise BundleFormatError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def d_star(self) -> int:
        return int(sum(self.channels_per_model))


def _edge_map(mask_native: np.ndarray) -> np.ndarray:
    """1 where a pixel touches a mask value change (within 1 px of boundary)."""
    m = mask_native
    edge = np.zeros_like(m)
    edge[1:, :] = np.maximum(edge[1:, :], np.abs(m[1:, :] - m[:-1, :]))
    edge[:-1, :] = np.maximum(edge[:-1, :], np.abs(m[1:, :] - m[:-1, :]))
    edge[:, 1:] = np.maximum(edge[:, 1:], np.abs(m[:, 1:] - m[:, :-1]))
    edge[:, :-1] = np.maximum(edge[:, :-1], np.abs(m[:, 1:] - m[:, :-1]))
    return edge


def synthesize_teachers(
    sample: SegmentationSample, spec: SynthTeacherSpec, seed: int
) -> TeacherBundle:
    """Fake teacher bundle built from the ground-truth mask.

    Even channels are blob-like (bilinearly downsampled mask: global
    shape, low-frequency); odd channels are edge-like (nonzero only
    within one pixel of the downsampled mask boundary: high-frequency).
    Gaussian noise sigma is added on top; sigma=0 gives the bare
    constructions. Deterministic per (sample, spec, seed).
    """
    rng = np.random.default_rng(seed)
    res = spec.native_resolution
    blob = resize_bilinear_hw(sample.mask.astype(np.float64), res, res).astype(np.float32)
    edge = _edge_map(resize_nearest_hw(sample.mask, res, res)).astype(np.float32)
    records = []
    for m, n_chan in enumerate(spec.channels_per_model):
        chans = np.empty((res, res, n_chan), dtype=np.float32)
        for c in range(n_chan):
            base = blob if c % 2 == 0 else edge
            noise = rng.standard_normal((res, res)).astype(np.float32) if spec.sigma > 0 else 0.0
            chans[:, :, c] = base + spec.sigma * noise
        records.append(TeacherRecord(model_id=f"pseudo{m}", feature_map=chans))
    return fuse_records(records, spec.target_resolution, spec.normalize)
