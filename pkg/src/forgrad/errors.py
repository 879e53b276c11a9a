"""Exception types shared across the toolkit."""


class ForgradError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(ForgradError):
    pass


class NonFinite(ForgradError):
    pass


class StaleCache(ForgradError):
    pass


class Divergence(ForgradError):
    pass


class FormatError(ForgradError):
    pass


class VersionError(ForgradError):
    pass


class ValidationError(ForgradError):
    pass


class AlreadyCentered(ForgradError):
    pass


class NotCentered(ForgradError):
    pass


class EmptyInput(ForgradError):
    pass


class InsufficientBins(ForgradError):
    pass


class NegativeSigma(ForgradError):
    pass


class NotAConvLayer(ForgradError):
    pass


class DegenerateMasks(ForgradError):
    pass


class DegenerateSubsetSize(ForgradError):
    pass


class UnsupportedMethod(ForgradError):
    pass


class EmptyValidationSet(ForgradError):
    pass


class CountMismatch(ForgradError):
    pass
