"""Exception types shared across the package; the CLI maps each to an exit code."""


class ConfigError(ValueError):
    """Invalid hyperparameters or flag combination. Exit code 2."""

    exit_code = 2


class DataError(ValueError):
    """Malformed, truncated or incompatible input file. Exit code 3."""

    exit_code = 3
    code = "data"


class BadMagicError(DataError):
    code = "bad_magic"


class BadVersionError(DataError):
    code = "bad_version"


class TruncatedError(DataError):
    code = "truncated"


class IncompatibleCheckpointError(DataError):
    code = "incompatible"


class NumericalError(ArithmeticError):
    """NaN/Inf encountered in inputs, gradients or the loss. Exit code 4."""

    exit_code = 4
