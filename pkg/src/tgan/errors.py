"""Exception types shared across the package; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or arguments (exit code 2)."""


class ShapeError(ValueError):
    """Tensor or array shape violates a model or loss contract."""


class DataError(RuntimeError):
    """Corpus on disk is malformed or incomplete (exit code 3)."""


class NumericError(RuntimeError):
    """A loss or metric became NaN or infinite (exit code 4)."""
