"""Exception hierarchy shared by every qedge module."""


class QedgeError(Exception):
    """Base class for all qedge errors."""


class InvalidArgumentError(QedgeError, ValueError):
    pass


class InvalidDataError(QedgeError, ValueError):
    """Input contains NaN/Inf or values outside a format's legal range."""


class LayoutError(QedgeError, ValueError):
    """Tensor shape is incompatible with a format's block layout."""


class ShapeMismatchError(QedgeError, ValueError):
    pass


class CapacityError(QedgeError):
    """KV cache or context window exhausted."""


class ContainerError(QedgeError):
    """Base class for model container read failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class UnsupportedFormatError(ContainerError):
    pass


class IntegrityError(ContainerError):
    """Payload checksum does not match the header."""


class TruncationError(ContainerError):
    pass


class MeasurementError(QedgeError):
    """Power or latency measurements violate a physical invariant."""


class PowerLogError(QedgeError, ValueError):
    """Malformed power-log CSV."""


class TableFormatError(QedgeError, ValueError):
    """Malformed performance-table CSV."""
