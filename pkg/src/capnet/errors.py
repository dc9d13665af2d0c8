"""Error types shared across the library.

Every raised error names what went wrong in terms of the caller's inputs;
shape problems always include both offending shapes.
"""


class CapnetError(Exception):
    """Base class for all library errors."""


class DimensionError(CapnetError, ValueError):
    """Operand shapes do not fit the operation."""


class ContractViolation(CapnetError, ValueError):
    """A documented precondition was broken by the caller."""


class ConfigError(CapnetError, ValueError):
    """A run configuration is malformed or inconsistent."""


class FormatError(CapnetError, ValueError):
    """A serialized artifact (tensor file, manifest) cannot be parsed."""
