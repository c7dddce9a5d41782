"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: validation errors exit 1,
I/O and file-format errors exit 2, numeric divergence exits 3.
"""


class BdsrError(Exception):
    """Base class for all package errors."""


class SizeError(BdsrError):
    """Tensor dimensions are zero, negative, or implausibly large."""


class ShapeError(BdsrError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(BdsrError):
    """A numeric parameter is outside its valid range."""


class DimensionError(BdsrError):
    """Image dimensions violate an alignment or divisibility requirement."""


class FormatError(BdsrError):
    """A serialized file is corrupt, truncated, or has a bad magic/version."""


class ConfigError(BdsrError):
    """A configuration key or flag value is invalid."""


class InputError(BdsrError):
    """An input collection or image is empty or unusable."""


class DivergenceError(BdsrError):
    """Training produced a non-finite or exploding loss."""
