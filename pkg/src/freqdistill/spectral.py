"""Frequency-domain split of feature maps into low/high-frequency parts.

Convention: unnormalized forward DFT, inverse carries the 1/(H*W)
factor (numpy's default). Masks are built on the wrapped (unshifted)
frequency grid so they are exactly symmetric under frequency negation,
which keeps inverse transforms of masked real-input spectra real.

Everything here runs in 64-bit and carries no gradients; decomposed
teacher components are constants during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SymmetryError

IMAG_RESIDUE_LIMIT = 1e-6


def _check_plane(shape: tuple[int, ...]) -> None:
    if len(shape) not in (2, 3):
        raise DimensionError("rank", f"expected (H, W) or (H, W, C), got {shape}")
    if shape[0] < 2:
        raise DimensionError("height", f"need height >= 2, got {shape[0]}")
    if shape[1] < 2:
        raise DimensionError("width", f"need width >= 2, got {shape[1]}")


def fft2d(fmap: np.ndarray) -> np.ndarray:
    """Per-channel 2D forward DFT of a real (H, W[, C]) map."""
    arr = np.asarray(fmap, dtype=np.float64)
    _check_plane(arr.shape)
    return np.fft.fft2(arr, axes=(0, 1))


def ifft2d(spec: np.ndarray) -> np.ndarray:
    """Inverse DFT back to a real map.

    The imaginary residue of the result must stay below 1e-6; anything
    larger means the spectrum lost conjugate symmetry (a broken mask)
    and raises SymmetryError instead of silently discarding signal.
    """
    arr = np.asarray(spec, dtype=np.complex128)
    _check_plane(arr.shape)
    out = np.fft.ifft2(arr, axes=(0, 1))
    residue = float(np.abs(out.imag).max())
    if residue > IMAG_RESIDUE_LIMIT:
        raise SymmetryError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_LIMIT:.0e}; "
            "spectrum is not conjugate-symmetric"
        )
    return np.ascontiguousarray(out.real)


@dataclass(frozen=True)
class RadialMaskPair:
    """Complementary binary masks over the wrapped frequency grid."""

    lfc_mask: np.ndarray
    hfc_mask: np.ndarray
    cutoff_fraction: float


@dataclass(frozen=True)
class FrequencyComponents:
    """Real spatial-domain low- and high-frequency parts of a map."""

    e_lfc: np.ndarray
    e_hfc: np.ndarray


def make_radial_masks(h: int, w: int, cutoff_fraction: float) -> RadialMaskPair:
    """Split frequency bins by wrapped radial distance.

    r(p, q) = sqrt(min(p, H-p)^2 + min(q, W-q)^2), normalized by
    r_max = sqrt(floor(H/2)^2 + floor(W/2)^2). Bins with r <= rho*r_max
    go to the low-frequency mask, ties included; the high-frequency mask
    is the exact complement.
    """
    if not 0.0 < cutoff_fraction < 1.0:
        raise ValueError(f"cutoff_fraction must be in (0, 1), got {cutoff_fraction}")
    if h < 2:
        raise DimensionError("height", f"need height >= 2, got {h}")
    if w < 2:
        raise DimensionError("width", f"need width >= 2, got {w}")
    p = np.arange(h)
    q = np.arange(w)
    wp = np.minimum(p, h - p).astype(np.float64)
    wq = np.minimum(q, w - q).astype(np.float64)
    r = np.sqrt(wp[:, None] ** 2 + wq[None, :] ** 2)
    r_max = np.sqrt(float((h // 2) ** 2 + (w // 2) ** 2))
    lfc = r <= cutoff_fraction * r_max
    return RadialMaskPair(lfc_mask=lfc, hfc_mask=~lfc, cutoff_fraction=cutoff_fraction)


def decompose(fused: np.ndarray, cutoff_fraction: float) -> FrequencyComponents:
    """Mask the spectrum of a real map into complementary spatial parts.

    e_lfc + e_hfc reproduces the input to within FFT round-off (the
    masks partition the bins and the transform is linear).
    """
    arr = np.asarray(fused, dtype=np.float64)
    _check_plane(arr.shape)
    masks = make_radial_masks(arr.shape[0], arr.shape[1], cutoff_fraction)
    spec = fft2d(arr)
    lfc = masks.lfc_mask if arr.ndim == 2 else masks.lfc_mask[:, :, None]
    hfc = masks.hfc_mask if arr.ndim == 2 else masks.hfc_mask[:, :, None]
    return FrequencyComponents(e_lfc=ifft2d(spec * lfc), e_hfc=ifft2d(spec * hfc))
