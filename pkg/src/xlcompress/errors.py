"""Exception hierarchy.

``DomainError`` subclasses map to CLI exit code 2, ``InputError`` subclasses
to exit code 3.
"""


class XLCompressError(Exception):
    pass


class DomainError(XLCompressError):
    pass


class InputError(XLCompressError):
    pass


class PreconditionError(DomainError, ValueError):
    pass


class UnsupportedShapeError(DomainError, ValueError):
    pass


class GroupingError(DomainError, ValueError):
    pass


class ReconstructionError(DomainError, ValueError):
    pass


class ConfigurationError(DomainError, ValueError):
    pass


class AnalysisError(DomainError, ValueError):
    pass


class ContainerError(InputError):
    pass


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class DuplicateNameError(ContainerError):
    pass


class TrailingDataError(ContainerError):
    pass


class ReportSchemaError(InputError):
    pass
