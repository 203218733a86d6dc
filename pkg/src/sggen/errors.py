"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4. Anything else is a plain crash.
"""


class SggenError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 1


class ConfigError(SggenError):
    """Bad configuration file or incompatible option combination."""

    exit_code = 2


class DataError(SggenError):
    """Malformed or missing input data (scenes, triples, images, checkpoints)."""

    exit_code = 3


class NumericError(SggenError):
    """Numeric failure: divergence, non-finite loss, failed gradient check."""

    exit_code = 4


class ShapeError(SggenError, ValueError):
    """Tensor dimension mismatch; message names the offending shapes."""

    exit_code = 4
