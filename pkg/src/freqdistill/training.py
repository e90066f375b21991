"""Three-phase training loop.

Phase I (epochs [0, phase1_end)) trains segmentation only and never
touches teacher data. Phase II adds the frequency-distillation terms;
teacher bundles are fused, decomposed once per sample id and cached
(teacher features come from the un-augmented image, so augmentation
does not re-trigger decomposition). Phase III freezes the encoder conv
blocks; the latent extraction convs, the projection heads and the
decoder keep training under the phase-II loss. Optimizer moments
persist across phase boundaries.
"""

from __future__ import annotations

import csv
import os
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import spectral
from .autodiff import Tape, Tensor4, backward
from .checkpoint import save_checkpoint
from .data import AugmentConfig, SegmentationSample, augment, batch_images, batch_masks
from .errors import ConfigError, DimensionError
from .losses import LossBreakdown, LossWeights, bce_loss, dice_loss, distill_l1, distill_l2, phase_loss
from .model import StudentNet
from .optim import Adam
from .teachers import SynthTeacherSpec, load_bundle, synthesize_teachers


@dataclass
class TrainConfig:
    total_epochs: int = 60
    phase1_end: int = 20
    phase2_end: int = 40
    lr: float = 1e-4
    batch_size: int = 4
    flip_prob: float = 0.5
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)
    seed: int = 0
    rho: float = 0.25
    weights: LossWeights = field(default_factory=LossWeights)
    teacher_dir: Optional[str] = None
    synth_teachers: Optional[SynthTeacherSpec] = None
    teacher_target_resolution: int = 16
    normalize_teachers: bool = True
    checkpoint_dir: Optional[str] = None
    log_csv: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.phase1_end < self.phase2_end <= self.total_epochs:
            raise ConfigError(
                "phase boundaries must satisfy 0 < phase1_end < phase2_end <= total_epochs, "
                f"got {self.phase1_end}/{self.phase2_end}/{self.total_epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if not self.scales:
            raise ConfigError("scales must be non-empty")

    @classmethod
    def paper_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(total_epochs=120, phase1_end=40, phase2_end=80, lr=1e-4,
                    scales=(0.75, 1.0, 1.25))
        base.update(overrides)
        return cls(**base)

    def phase_of(self, epoch: int) -> int:
        if epoch < self.phase1_end:
            return 1
        if epoch < self.phase2_end:
            return 2
        return 3


class TeacherSource:
    """Fused + decomposed teacher components per sample, with access counting.

    Every call to :meth:`components` bumps ``access_count``, cached or
    not; phase-I integrity asserts the counter stays at zero.
    """

    def __init__(self, rho: float):
        self.rho = rho
        self.access_count = 0
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def components(self, sample: SegmentationSample) -> tuple[np.ndarray, np.ndarray]:
        """Return (e_lfc, e_hfc) as (D*, H', W') float32 arrays."""
        self.access_count += 1
        hit = self._cache.get(sample.id)
        if hit is None:
            bundle = self._fetch(sample)
            parts = spectral.decompose(bundle.fused, self.rho)
            hit = (
                parts.e_lfc.transpose(2, 0, 1).astype(np.float32),
                parts.e_hfc.transpose(2, 0, 1).astype(np.float32),
            )
            self._cache[sample.id] = hit
        return hit

    def _fetch(self, sample: SegmentationSample):
        raise NotImplementedError


class SyntheticTeacherSource(TeacherSource):
    def __init__(self, spec: SynthTeacherSpec, master_seed: int, rho: float):
        super().__init__(rho)
        self.spec = spec
        self.master_seed = master_seed

    def _fetch(self, sample: SegmentationSample):
        seed = (zlib.crc32(sample.id.encode("utf-8")) ^ (self.master_seed * 2654435761)) & 0x7FFFFFFF
        return synthesize_teachers(sample, self.spec, seed)


class FileTeacherSource(TeacherSource):
    def __init__(self, directory: str, target_resolution: int, normalize: bool, rho: float):
        super().__init__(rho)
        self.directory = directory
        self.target_resolution = target_resolution
        self.normalize = normalize

    def _fetch(self, sample: SegmentationSample):
        path = os.path.join(self.directory, f"{sample.id}.dfom")
        return load_bundle(path, self.target_resolution, self.normalize)


def make_teacher_source(config: TrainConfig) -> TeacherSource:
    if (config.teacher_dir is None) == (config.synth_teachers is None):
        raise ConfigError("exactly one of teacher_dir / synth_teachers must be set")
    if config.teacher_dir is not None:
        if not os.path.isdir(config.teacher_dir):
            raise FileNotFoundError(f"teacher directory not found: {config.teacher_dir}")
        return FileTeacherSource(
            config.teacher_dir, config.teacher_target_resolution, config.normalize_teachers,
            config.rho,
        )
    return SyntheticTeacherSource(config.synth_teachers, config.seed, config.rho)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, step: int, epoch: int, phase: int, losses: LossBreakdown) -> None:
        self.rows.append(
            dict(step=step, epoch=epoch, phase=phase, dice=losses.dice, bce=losses.bce,
                 l1_distill=losses.l1_distill, l2_distill=losses.l2_distill, total=losses.total)
        )

    def write_csv(self, path: str | os.PathLike) -> None:
        fields = ["step", "epoch", "phase", "dice", "bce", "l1_distill", "l2_distill", "total"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)


def run_training(
    config: TrainConfig,
    model: StudentNet,
    dataset: Sequence[SegmentationSample],
    teacher_source: Optional[TeacherSource] = None,
) -> TrainLog:
    """Train in place; returns the per-step loss log."""
    if not dataset:
        raise ConfigError("dataset is empty")
    if teacher_source is None:
        teacher_source = make_teacher_source(config)
    optimizer = Adam(model.params, lr=config.lr)
    aug_cfg = AugmentConfig(flip_prob=config.flip_prob, scales=config.scales)
    log = TrainLog()
    step = 0
    for epoch in range(config.total_epochs):
        phase = config.phase_of(epoch)
        if epoch == config.phase1_end:
            # phase-II entry: fail fast on channel-count mismatch
            lfc, _ = teacher_source.components(dataset[0])
            if lfc.shape[0] != model.config.d_star:
                raise DimensionError(
                    "channels",
                    f"teacher d_star={lfc.shape[0]} but projections emit {model.config.d_star}",
                )
        if epoch == config.phase2_end:
            model.set_encoder_trainable(False)

        order_rng = np.random.default_rng([config.seed, epoch, 0])
        aug_rng = np.random.default_rng([config.seed, epoch, 1])
        order = order_rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            originals = [dataset[i] for i in idx]
            samples = [augment(s, aug_cfg, aug_rng) for s in originals]
            x = Tensor4(batch_images(samples))
            gt = Tensor4(batch_masks(samples))
            model.zero_grads()
            with Tape() as tape:
                pred, _, latents = model.forward(x)
                dice = dice_loss(pred, gt)
                bce = bce_loss(pred, gt)
                if phase >= 2:
                    comps = [teacher_source.components(s) for s in originals]
                    t_lfc = Tensor4(np.stack([c[0] for c in comps]))
                    t_hfc = Tensor4(np.stack([c[1] for c in comps]))
                    p1, p2 = model.project_latents(
                        latents, d_star=t_lfc.shape[1], target_resolution=t_lfc.shape[2]
                    )
                    l1 = distill_l1(p1, t_lfc)
                    l2 = distill_l2(p2, t_hfc)
                    total = phase_loss(phase, dice, bce, l1, l2, config.weights)
                    parts = LossBreakdown(dice.item(), bce.item(), l1.item(), l2.item(), total.item())
                else:
                    total = phase_loss(1, dice, bce, weights=config.weights)
                    parts = LossBreakdown(dice.item(), bce.item(), 0.0, 0.0, total.item())
            backward(tape, total)
            optimizer.step()
            log.add(step, epoch, phase, parts)
            step += 1

        if config.checkpoint_dir is not None:
            name = None
            if epoch == config.phase1_end - 1:
                name = "phase1.dfck"
            elif epoch == config.phase2_end - 1:
                name = "phase2.dfck"
            if epoch == config.total_epochs - 1:
                save_checkpoint(os.path.join(config.checkpoint_dir, "final.dfck"), model.params)
            if name is not None:
                save_checkpoint(os.path.join(config.checkpoint_dir, name), model.params)
    if config.log_csv is not None:
        log.write_csv(config.log_csv)
    return log
