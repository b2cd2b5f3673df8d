"""Exception types shared across the package."""


class GsmatchError(Exception):
    """Base class for all package errors."""


class InvalidCorrespondence(GsmatchError):
    """A correspondence references a point index outside its cloud."""


class DegenerateInput(GsmatchError):
    """Geometric input does not determine a unique rigid transform."""


class InsufficientPoints(GsmatchError):
    """A cloud is too small for the requested neighborhood size."""


class NormalsRequired(GsmatchError):
    """An operation needs per-point normals but the cloud has none."""


class FormatError(GsmatchError):
    """A file does not follow the expected byte layout."""


class FileError(GsmatchError):
    """A referenced input file is missing or unreadable."""


class DimensionMismatch(GsmatchError):
    """Two descriptor sets have different feature dimensions."""


class EmptyInput(GsmatchError):
    """A score matrix or point set is empty where data is required."""


class InvalidCount(GsmatchError):
    """An order-statistics sample count must be at least 1."""


class InsufficientData(GsmatchError):
    """Too few samples to fit a distribution."""


class InsufficientCorrespondences(GsmatchError):
    """Fewer correspondences than the minimal sample size."""


class ConditionTooRare(GsmatchError):
    """Rejection sampling never satisfied the conditioning event."""

    def __init__(self, message, accepted=0, samples=0):
        super().__init__(message)
        self.accepted = accepted
        self.samples = samples
