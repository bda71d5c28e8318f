"""Exception hierarchy.

``ValidationError`` marks bad inputs (CLI exit code 2); the other
``SilError`` subclasses mark runtime task failures (exit code 3).
"""


class SilError(Exception):
    pass


class ValidationError(SilError, ValueError):
    pass


class NoSamplesError(SilError, ValueError):
    pass


class InsufficientSamplesError(SilError, ValueError):
    pass


class NoDetectionsError(SilError):
    pass


class UnknownMarkerError(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoLineError(SilError):
    pass


class FilterError(SilError):
    pass
