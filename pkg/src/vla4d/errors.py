"""Exception hierarchy.

Everything raised on bad input derives from :class:`DataError`; the CLI maps
those to exit code 2 and prints the class name.
"""


class VlaError(Exception):
    """Base class for all package errors."""


class DataError(VlaError, ValueError):
    """Input data violates a format, schema or precondition."""


# tensorio: 4DTN container
class TensorFormatError(DataError):
    pass


class BadMagic(TensorFormatError):
    pass


class UnsupportedVersion(TensorFormatError):
    pass


class UnsupportedDtype(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


class DimOverflow(TensorFormatError):
    pass


class TrailingData(TensorFormatError):
    pass


# tensorio: netpbm images
class ImageFormatError(DataError):
    pass


class UnsupportedFormat(ImageFormatError):
    pass


class CorruptHeader(ImageFormatError):
    pass


class TruncatedPixels(ImageFormatError):
    pass


# tensorio: manifests
class SchemaError(DataError):
    def __init__(self, path, message="missing or invalid"):
        self.path = path
        super().__init__(f"{path}: {message}")


class NonMonotonicTimestamps(DataError):
    pass


# geometry
class NotARotation(DataError):
    pass


class BehindCamera(DataError):
    pass


class IndivisibleShape(DataError):
    pass


class DegeneratePose(DataError):
    pass


# sampling
class ImageTooSmall(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MissingFrame(DataError):
    pass


# actions
class TooFewSamples(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class TrajectoryRejected(DataError):
    """Trajectory filtered out by preprocessing (e.g. too many actions)."""


# encoding
class FutureFrame(DataError):
    pass


class CurrentFrameMissing(DataError):
    pass


# learnkit
class DimMismatch(DataError):
    pass
