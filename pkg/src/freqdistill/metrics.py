"""Six-metric segmentation evaluation protocol.

Threshold-swept mean Dice / mean IoU, MAE, structure measure, max
enhanced-alignment measure and weighted F-measure, computed per
prediction/ground-truth pair and averaged over a dataset.

Conventions, pinned so results are reproducible:
  - Sweeps binarize at 256 thresholds t = k/255; a pixel is positive
    when pred >= t and pred > 0 (so t = 0 acts as a limit from above:
    exact-zero pixels are never positive, exact-one pixels survive
    t = 1).
  - 0/0 overlap ratios are defined as 1 (both maps empty agree).
  - S-measure follows the reference object+region formulation with
    sample (N-1) variances; degenerate GTs map to 1-mean(pred) /
    mean(pred). Final score clamped to [0, 1].
  - E-measure enhanced alignment is averaged over pixels (divided by
    N, keeping the score inside [0, 1]) and maximized over thresholds.
  - Weighted F-measure uses an exact Euclidean distance transform with
    a fixed tie rule (smaller distance, then smaller source column,
    then smaller source row), a 7x7 sigma=5 Gaussian dependency filter
    with zero padding, and B = 2 - 0.5**(dist/5) importance decay.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .interp import resize_bilinear_hw
from .pgm import read_pgm

EPS = np.finfo(np.float64).eps
THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0


def _as_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Validate and align one evaluation pair."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or gt.ndim != 2:
        raise EvaluationError(f"pred/gt must be 2-D, got {pred.shape} and {gt.shape}")
    if pred.size == 0 or gt.size == 0:
        raise EvaluationError("empty prediction or ground-truth map")
    binary = np.isin(gt, (0.0, 1.0)).all()
    if not binary:
        raise EvaluationError("ground truth must be strictly binary (values 0 and 1)")
    if pred.shape != gt.shape:
        pred = resize_bilinear_hw(pred, gt.shape[0], gt.shape[1])
    return np.clip(pred, 0.0, 1.0), gt


# --------------------------------------------------------------- mDice / mIoU


def dice_iou_curve(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Mean Dice and IoU over the 256-threshold sweep."""
    pred, gt = _as_pair(pred, gt)
    fg = np.sort(pred[gt > 0.5])
    bg = np.sort(pred[gt <= 0.5])
    n_fg = fg.size
    tp = n_fg - np.searchsorted(fg, THRESHOLDS, side="left")
    fp = bg.size - np.searchsorted(bg, THRESHOLDS, side="left")
    # t = 0: count pred > 0, not pred >= 0
    tp[0] = n_fg - np.searchsorted(fg, 0.0, side="right")
    fp[0] = bg.size - np.searchsorted(bg, 0.0, side="right")
    fn = n_fg - tp
    dice_den = 2 * tp + fp + fn
    iou_den = tp + fp + fn
    dice = np.where(dice_den > 0, 2 * tp / np.maximum(dice_den, 1), 1.0)
    iou = np.where(iou_den > 0, tp / np.maximum(iou_den, 1), 1.0)
    return float(dice.mean()), float(iou.mean())


def dice_iou_fixed(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    """Single-threshold Dice and IoU (the --fixed-threshold variant)."""
    pred, gt = _as_pair(pred, gt)
    hard = (pred >= threshold) & (pred > 0)
    gt_b = gt > 0.5
    tp = float(np.logical_and(hard, gt_b).sum())
    fp = float(np.logical_and(hard, ~gt_b).sum())
    fn = float(np.logical_and(~hard, gt_b).sum())
    dice = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 1.0
    iou = tp / (tp + fp + fn) if (tp + fp + fn) > 0 else 1.0
    return dice, iou


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _as_pair(pred, gt)
    # exactly-rounded sum: the result is independent of pixel order, so
    # reference implementations agree bit for bit
    return math.fsum(np.abs(pred - gt).ravel()) / pred.size


# ------------------------------------------------------------------ S-measure


def _object_score(values: np.ndarray) -> float:
    """2x / (x^2 + 1 + sigma_x) over the selected region's values."""
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(pred: np.ndarray, gt_b: np.ndarray) -> float:
    u = float(gt_b.mean())
    return u * _object_score(pred[gt_b]) + (1.0 - u) * _object_score(1.0 - pred[~gt_b])


def _ssim_block(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = float(pred.mean()), float(gt.mean())
    dx, dy = pred - x, gt - y
    sigma_x2 = float((dx * dx).sum()) / (n - 1 + EPS)
    sigma_y2 = float((dy * dy).sum()) / (n - 1 + EPS)
    sigma_xy = float((dx * dy).sum()) / (n - 1 + EPS)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0.0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0.0 else 0.0


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _centroid(gt_b: np.ndarray) -> tuple[int, int]:
    """1-indexed rounded foreground centroid (image center when empty)."""
    h, w = gt_b.shape
    total = gt_b.sum()
    if total == 0:
        return _round_half_up(h / 2), _round_half_up(w / 2)
    rows = gt_b.sum(axis=1) @ np.arange(1, h + 1)
    cols = gt_b.sum(axis=0) @ np.arange(1, w + 1)
    return _round_half_up(rows / total), _round_half_up(cols / total)


def _s_region(pred: np.ndarray, gt_b: np.ndarray) -> float:
    h, w = gt_b.shape
    cy, cx = _centroid(gt_b)
    gt_f = gt_b.astype(np.float64)
    score = 0.0
    for rows, cols in (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ):
        block_gt = gt_f[rows, cols]
        weight = block_gt.size / (h * w)
        if block_gt.size:
            score += weight * _ssim_block(pred[rows, cols], block_gt)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    pred, gt = _as_pair(pred, gt)
    gt_b = gt > 0.5
    if not gt_b.any():
        return 1.0 - float(pred.mean())
    if gt_b.all():
        return float(pred.mean())
    s = alpha * _s_object(pred, gt_b) + (1.0 - alpha) * _s_region(pred, gt_b)
    return float(np.clip(s, 0.0, 1.0))


# ------------------------------------------------------------------ E-measure


def e_measure_max(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _as_pair(pred, gt)
    gt_b = gt > 0.5
    n = gt.size
    best = 0.0
    gt_empty, gt_full = not gt_b.any(), bool(gt_b.all())
    d_gt = gt_b.astype(np.float64)
    for t in THRESHOLDS:
        fm = ((pred >= t) & (pred > 0)).astype(np.float64)
        if gt_empty:
            enhanced = 1.0 - fm
        elif gt_full:
            enhanced = fm
        else:
            a_fm = fm - fm.mean()
            a_gt = d_gt - d_gt.mean()
            align = 2.0 * a_gt * a_fm / (a_gt * a_gt + a_fm * a_fm + EPS)
            enhanced = (align + 1.0) ** 2 / 4.0
        best = max(best, float(enhanced.sum()) / n)
    return best


# --------------------------------------------------------- distance transform


def distance_transform(fg: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact Euclidean distance to the nearest True pixel, with sources.

    Returns (distance, source_row, source_col). Ties resolve to the
    smaller source column, then the smaller source row. Requires at
    least one True pixel.
    """
    fg = np.asarray(fg, dtype=bool)
    if not fg.any():
        raise EvaluationError("distance transform needs a nonempty foreground")
    h, w = fg.shape
    big = np.int64(h * h + w * w + 1)

    # vertical pass: per-column squared distance to nearest True row,
    # downward sweep first so equidistant ties keep the smaller row
    vert = np.full((h, w), big, dtype=np.int64)
    vrow = np.zeros((h, w), dtype=np.int64)
    run = np.full(w, -(10 * (h + w)), dtype=np.int64)
    for r in range(h):
        run[fg[r]] = r
        d = (r - run) ** 2
        vert[r] = d
        vrow[r] = run
    run[:] = 10 * (h + w)
    for r in range(h - 1, -1, -1):
        run[fg[r]] = r
        d = (r - run) ** 2
        closer = d < vert[r]
        vert[r][closer] = d[closer]
        vrow[r][closer] = run[closer]

    # horizontal pass: combine column minima across the row; argmin takes
    # the first (smallest source column) on exact integer ties
    cols = np.arange(w, dtype=np.int64)
    offsets = (cols[:, None] - cols[None, :]) ** 2  # (target col, source col)
    dist2 = np.empty((h, w), dtype=np.int64)
    src_r = np.empty((h, w), dtype=np.int64)
    src_c = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        totals = offsets + vert[r][None, :]
        pick = np.argmin(totals, axis=1)
        dist2[r] = totals[cols, pick]
        src_c[r] = pick
        src_r[r] = vrow[r][pick]
    return np.sqrt(dist2.astype(np.float64)), src_r, src_c


_GAUSS_7X5 = None


def _gauss_kernel() -> np.ndarray:
    global _GAUSS_7X5
    if _GAUSS_7X5 is None:
        ax = np.arange(-3, 4, dtype=np.float64)
        g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * 25.0))
        _GAUSS_7X5 = g / g.sum()
    return _GAUSS_7X5


def _filter_zero_pad(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(image, ((ph, ph), (pw, pw)))
    out = np.zeros_like(image)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i : i + image.shape[0], j : j + image.shape[1]]
    return out


def weighted_f_beta(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    pred, gt = _as_pair(pred, gt)
    gt_b = gt > 0.5
    if not gt_b.any():
        # no foreground to recall; convention from the reference toolchain
        return 0.0
    err = np.abs(pred - gt)
    dist, src_r, src_c = distance_transform(gt_b)

    et = err.copy()
    bg = ~gt_b
    et[bg] = err[src_r[bg], src_c[bg]]
    ea = _filter_zero_pad(et, _gauss_kernel())
    min_e_ea = err.copy()
    sel = gt_b & (ea < err)
    min_e_ea[sel] = ea[sel]

    b = np.ones_like(err)
    b[bg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bg])
    ew = min_e_ea * b

    tpw = float(gt_b.sum()) - float(ew[gt_b].sum())
    fpw = float(ew[bg].sum())
    recall = 1.0 - float(ew[gt_b].mean())
    precision = tpw / (EPS + tpw + fpw)
    return (1.0 + beta2) * recall * precision / (EPS + recall + beta2 * precision)


# ------------------------------------------------------------------- reports


@dataclass(frozen=True)
class MetricReport:
    m_dice: float
    m_iou: float
    f_beta_w: float
    s_alpha: float
    e_phi_max: float
    mae: float
    n_images: int


def compute_pair(pred: np.ndarray, gt: np.ndarray, fixed_threshold: bool = False) -> dict:
    """All six metrics for one pair."""
    if fixed_threshold:
        dice, iou = dice_iou_fixed(pred, gt)
    else:
        dice, iou = dice_iou_curve(pred, gt)
    return dict(
        m_dice=dice,
        m_iou=iou,
        f_beta_w=weighted_f_beta(pred, gt),
        s_alpha=s_measure(pred, gt),
        e_phi_max=e_measure_max(pred, gt),
        mae=mae(pred, gt),
    )


def evaluate_pairs(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    fixed_threshold: bool = False,
    max_workers: int = 1,
) -> tuple[MetricReport, list[dict]]:
    if not pairs:
        raise EvaluationError("no evaluation pairs given")
    if max_workers > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(lambda pg: compute_pair(pg[0], pg[1], fixed_threshold), pairs))
    else:
        rows = [compute_pair(p, g, fixed_threshold) for p, g in pairs]
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return MetricReport(n_images=len(rows), **means), rows


def evaluate_folder(
    pred_dir: str | os.PathLike,
    gt_dir: str | os.PathLike,
    fixed_threshold: bool = False,
    max_workers: int = 1,
) -> tuple[MetricReport, list[dict]]:
    """Evaluate matching PGM files; filename sets must agree exactly."""
    pred_names = {f for f in os.listdir(pred_dir) if f.endswith(".pgm")}
    gt_names = {f for f in os.listdir(gt_dir) if f.endswith(".pgm")}
    if pred_names != gt_names:
        only_pred = sorted(pred_names - gt_names)
        only_gt = sorted(gt_names - pred_names)
        raise EvaluationError(
            f"filename mismatch: only in pred {only_pred or 'none'}, only in gt {only_gt or 'none'}"
        )
    if not pred_names:
        raise EvaluationError("no .pgm files to evaluate")
    pairs = []
    names = sorted(pred_names)
    for name in names:
        try:
            pred = read_pgm(os.path.join(pred_dir, name)).astype(np.float64) / 255.0
            gt = (read_pgm(os.path.join(gt_dir, name)) > 127).astype(np.float64)
        except ValueError as exc:
            raise EvaluationError(str(exc)) from exc
        pairs.append((pred, gt))
    report, rows = evaluate_pairs(pairs, fixed_threshold, max_workers=max_workers)
    for name, row in zip(names, rows):
        row["image"] = name
    return report, rows
