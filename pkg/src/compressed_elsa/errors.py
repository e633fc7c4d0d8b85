from __future__ import annotations


class ElsaError(Exception):
    """Root of the package's runtime errors."""


class DataFormatError(ElsaError, ValueError):
    pass


class EmptyDataError(DataFormatError):
    pass


class ShapeMismatchError(ElsaError, ValueError):
    pass


class NonFiniteError(ElsaError, FloatingPointError):
    pass


class DeadLatentError(ElsaError, ValueError):
    pass


class SegmentationError(ElsaError, RuntimeError):
    pass


class EvaluationError(ElsaError, RuntimeError):
    pass


class NormalizationError(ElsaError, ValueError):
    """A matrix expected to have unit-norm rows does not."""
