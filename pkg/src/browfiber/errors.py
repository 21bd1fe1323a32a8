"""Exception types shared across the package."""


class BrowError(Exception):
    pass


# geometry / algorithm errors

class DegenerateProjection(BrowError):
    pass


class OutOfDomain(BrowError):
    pass


class RootOutOfDomain(OutOfDomain):
    pass


class EmptyRegion(BrowError):
    pass


class TooShort(BrowError):
    pass


class AllSamplesBehindCamera(BrowError):
    pass


class EmptyRoots(BrowError):
    pass


class NotWatertight(BrowError):
    pass


class MissingRoot(BrowError):
    pass


class KTooLarge(BrowError):
    pass


class DimensionMismatch(BrowError):
    pass


class EmptySet(BrowError):
    pass


class ShapeMismatch(BrowError):
    pass


class BothEmpty(BrowError):
    pass


class ConfigInvalid(BrowError, ValueError):
    pass


# file format errors

class FormatError(BrowError, ValueError):
    """Malformed input file. ``where`` is a byte offset or line number."""

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{where}: {message}"
        super().__init__(message)


class MagicMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class CountMismatch(FormatError):
    pass


class NonFinite(FormatError):
    pass


class SchemaError(FormatError):
    pass


class UnsupportedDirective(FormatError):
    pass


class IndexOutOfRange(FormatError):
    pass
