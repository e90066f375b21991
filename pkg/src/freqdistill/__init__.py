"""Frequency-aware feature distillation for lightweight segmentation.

A numpy-only training stack: a small autodiff engine, an encoder-decoder
student network, FFT-based low/high-frequency teacher decomposition,
a three-phase distillation training loop, and the standard six-metric
segmentation evaluation protocol.
"""

from .autodiff import Parameter, Tape, Tensor4, backward
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .data import AugmentConfig, SegmentationSample, augment, make_synthetic_dataset
from .errors import (
    BundleFormatError,
    CheckpointFormatError,
    ConfigError,
    DimensionError,
    EvaluationError,
    FreqDistillError,
    SymmetryError,
    TapeError,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    bce_loss,
    dice_loss,
    distill_l1,
    distill_l2,
    phase_loss,
    total_distill,
)
from .metrics import (
    MetricReport,
    dice_iou_curve,
    e_measure_max,
    evaluate_folder,
    evaluate_pairs,
    mae,
    s_measure,
    weighted_f_beta,
)
from .model import EncoderFeatures, ModelConfig, StudentLatents, StudentNet
from .optim import Adam
from .spectral import (
    FrequencyComponents,
    RadialMaskPair,
    decompose,
    fft2d,
    ifft2d,
    make_radial_masks,
)
from .teachers import (
    SynthTeacherSpec,
    TeacherBundle,
    TeacherRecord,
    fuse_records,
    load_bundle,
    read_records,
    synthesize_teachers,
    write_bundle,
)
from .training import (
    FileTeacherSource,
    SyntheticTeacherSource,
    TeacherSource,
    TrainConfig,
    TrainLog,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AugmentConfig",
    "BundleFormatError",
    "CheckpointFormatError",
    "ConfigError",
    "DimensionError",
    "EncoderFeatures",
    "EvaluationError",
    "FileTeacherSource",
    "FreqDistillError",
    "FrequencyComponents",
    "LossBreakdown",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "Parameter",
    "RadialMaskPair",
    "SegmentationSample",
    "StudentLatents",
    "StudentNet",
    "SymmetryError",
    "SynthTeacherSpec",
    "SyntheticTeacherSource",
    "Tape",
    "TapeError",
    "TeacherBundle",
    "TeacherRecord",
    "TeacherSource",
    "Tensor4",
    "TrainConfig",
    "TrainLog",
    "augment",
    "backward",
    "bce_loss",
    "decompose",
    "dice_iou_curve",
    "dice_loss",
    "distill_l1",
    "distill_l2",
    "e_measure_max",
    "evaluate_folder",
    "evaluate_pairs",
    "fft2d",
    "fuse_records",
    "ifft2d",
    "load_bundle",
    "load_checkpoint",
    "mae",
    "make_radial_masks",
    "make_synthetic_dataset",
    "phase_loss",
    "read_records",
    "restore_into",
    "run_training",
    "s_measure",
    "save_checkpoint",
    "synthesize_teachers",
    "total_distill",
    "weighted_f_beta",
    "write_bundle",
]
