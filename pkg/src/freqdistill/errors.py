"""Exception types shared across the package."""


class FreqDistillError(Exception):
    """Base class for all package errors."""


class DimensionError(FreqDistillError):
    """A tensor dimension does not satisfy an operation's contract.

    Carries the offending axis name so callers can report which
    dimension broke (batch / channels / height / width).
    """

    def __init__(self, axis: str, message: str):
        self.axis = axis
        super().__init__(f"{axis}: {message}")


class TapeError(FreqDistillError):
    """Misuse of the gradient tape (non-scalar loss, double backward, ...)."""


class SymmetryError(FreqDistillError):
    """An inverse transform produced a non-negligible imaginary residue.

    Raised when a spectrum that should be conjugate-symmetric is not,
    which usually means a frequency mask broke the symmetry.
    """


class BundleFormatError(FreqDistillError):
    """A teacher-embedding bundle file is malformed or inconsistent."""


class CheckpointFormatError(FreqDistillError):
    """A model checkpoint file is malformed or inconsistent."""


class ConfigError(FreqDistillError):
    """Invalid configuration value or unknown configuration key."""


class EvaluationError(FreqDistillError):
    """Invalid input to the evaluation pipeline (mismatched folders, ...)."""
