"""Exception taxonomy shared across the workbench.

The CLI maps these onto exit codes: domain/config problems exit 1,
file-format and I/O problems exit 2.
"""


class DomainError(ValueError):
    """A parameter is outside its valid domain (ratio, sigma, sizes, ...)."""


class ShapeError(ValueError):
    """Array arguments have incompatible or unexpected shapes."""


class ConfigurationError(ValueError):
    """An architecture or run configuration is internally inconsistent."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested operation (constant volume, zero-norm reference)."""


class FormatError(RuntimeError):
    """A file payload or sidecar header is malformed; message names the offending field."""


class NumericalError(RuntimeError):
    """A computation produced NaN/Inf or diverged."""


class InsufficientTextureError(RuntimeError):
    """Too few weak-texture patches survive selection for a noise estimate."""
