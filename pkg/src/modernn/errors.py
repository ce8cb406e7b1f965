"""Shared exception types.

ShapeError / ContractError signal caller bugs (bad shapes, violated
preconditions).  FormatError signals a corrupt or truncated data file.
ConfigError signals an invalid run configuration; the CLI maps it to exit
code 2 and I/O failures to exit code 3.
"""


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass
