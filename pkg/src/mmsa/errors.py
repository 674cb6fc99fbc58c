"""Error taxonomy shared across the package.

The split mirrors the CLI exit codes: configuration problems (2), broken or
mismatched input data (3), and numerical failures during training (4).
Plain ``ValueError`` is reserved for programming errors such as calling a
kernel with incompatible shapes.
"""


class ConfigError(Exception):
    """A run configuration is malformed or inconsistent."""


class DataError(Exception):
    """An input file or dataset is malformed, truncated, or mismatched."""


class NumericError(Exception):
    """A non-finite value appeared where the math requires finite numbers."""
