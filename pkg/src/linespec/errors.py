"""Exception hierarchy. The CLI maps each family to an exit code."""


class LinespecError(Exception):
    exit_code = 1


class ConfigError(LinespecError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 1


class NumericError(LinespecError, ArithmeticError):
    """Non-finite values or a numerical routine that failed to converge."""

    exit_code = 2


class EigenConvergenceError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class SamplingError(NumericError):
    """Rejection sampling ran out of retries (configuration is likely infeasible)."""


class FormatError(LinespecError, IOError):
    """Bad magic, version, or truncated file."""

    exit_code = 3
