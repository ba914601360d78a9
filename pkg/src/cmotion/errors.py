"""Exception hierarchy shared by all cmotion modules."""


class CmotionError(Exception):
    """Base class for every error raised by this package."""


class DegenerateGeometry(CmotionError):
    """Triangulation rays are (near-)parallel; the joint cannot be reconstructed."""


class NonFiniteJacobian(CmotionError):
    """Finite-difference covariance propagation hit a degenerate configuration."""


class InsufficientData(CmotionError):
    """Too few samples for the requested estimate or fit."""


class NotPositiveDefinite(CmotionError):
    """A matrix that must be SPD is not."""


class NotSymmetric(CmotionError):
    """A matrix that must be symmetric is not (beyond tolerance)."""


class SingularCovariance(CmotionError):
    """A covariance determinant underflowed; the NLL is not evaluable."""


class HistoryIncomplete(CmotionError):
    """A predictor was called with fewer input frames than it requires."""


class ModelNotFitted(CmotionError):
    """A trainable predictor was used before fitting."""


# Alias used by the streaming pipeline, where any unfitted model is a setup error.
NotFitted = ModelNotFitted


class NotCalibrated(CmotionError):
    """Pipeline started without a usable conformal calibration or OOD threshold."""


class InsufficientCalibrationData(CmotionError):
    """The requested quantile order statistic exceeds the calibration sample size."""


class TimeBeforeSet(CmotionError):
    """A prediction set was queried at a time earlier than its anchor."""


class LengthMismatch(CmotionError):
    """Paired streams or arrays disagree in length."""


class MixedTimestamps(CmotionError):
    """Spheres grouped into one occupancy do not share a timestamp."""


class InvalidProbability(CmotionError):
    """A probability parameter lies outside [0, 1]."""


class InvalidParams(CmotionError):
    """Synthetic-data or configuration parameters are out of range."""


class ParseError(CmotionError):
    """A JSON-lines input file is not parseable."""


class SchemaError(CmotionError):
    """A parseable input line does not match the documented schema."""


class NonUniformFrameRate(CmotionError):
    """Timestamps in a sequence are not uniformly spaced."""
