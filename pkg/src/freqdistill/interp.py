"""Shared resampling helpers.

Bilinear resizing is expressed as a pair of 1-D interpolation matrices
(one for rows, one for columns) so the same sampling convention is used
everywhere it is needed: the differentiable resize op, teacher-feature
fusion, data augmentation and prediction/ground-truth alignment.  The
convention is the usual align-corners-false mapping

    src = (dst + 0.5) * (n_in / n_out) - 0.5

with source coordinates clamped to the valid range.  Resizing to the
input's own size yields the exact identity matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def linear_interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) matrix applying 1-D bilinear resampling."""
    if n_in < 1:
        raise DimensionError("size", f"source size must be >= 1, got {n_in}")
    if n_out < 1:
        raise DimensionError("size", f"target size must be >= 1, got {n_out}")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for dst in range(n_out):
        src = (dst + 0.5) * scale - 0.5
        if src <= 0.0:
            mat[dst, 0] = 1.0
            continue
        if src >= n_in - 1:
            mat[dst, n_in - 1] = 1.0
            continue
        lo = int(np.floor(src))
        frac = src - lo
        mat[dst, lo] = 1.0 - frac
        mat[dst, lo + 1] = frac
    return mat


def nearest_index_map(n_in: int, n_out: int) -> np.ndarray:
    """Source index per target position for nearest-neighbour resampling."""
    if n_in < 1 or n_out < 1:
        raise DimensionError("size", "sizes must be >= 1")
    scale = n_in / n_out
    idx = np.floor((np.arange(n_out) + 0.5) * scale).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resize_bilinear_hwc(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resize an (H, W, C) array; dtype is preserved."""
    if grid.ndim != 3:
        raise DimensionError("rank", f"expected (H, W, C) array, got shape {grid.shape}")
    rows = linear_interp_matrix(grid.shape[0], out_h)
    cols = linear_interp_matrix(grid.shape[1], out_w)
    out = np.einsum("oi,ijc,pj->opc", rows, grid.astype(np.float64), cols)
    return out.astype(grid.dtype)


def resize_bilinear_hw(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resize an (H, W) array; dtype is preserved."""
    if grid.ndim != 2:
        raise DimensionError("rank", f"expected (H, W) array, got shape {grid.shape}")
    out = resize_bilinear_hwc(grid[:, :, None], out_h, out_w)
    return out[:, :, 0]


def resize_nearest_hw(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of an (H, W) array; values are copied, never mixed."""
    if grid.ndim != 2:
        raise DimensionError("rank", f"expected (H, W) array, got shape {grid.shape}")
    ri = nearest_index_map(grid.shape[0], out_h)
    ci = nearest_index_map(grid.shape[1], out_w)
    return grid[np.ix_(ri, ci)]
