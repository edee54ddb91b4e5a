"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not follow the expected binary layout (bad magic, width, ...)."""


class DataError(ValueError):
    """Well-formed input whose content violates a dataset invariant."""


class ShapeError(ValueError):
    """Array shapes are incompatible with a layer or network."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DegenerateError(ValueError):
    """Input is degenerate for the requested statistic (e.g. constant regressor)."""


class TruncatedFileError(OSError):
    """A binary payload ended before the size announced in its header."""
