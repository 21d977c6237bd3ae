"""Exception hierarchy; ``exit_code`` maps each family to a CLI exit status."""


class StdGanError(Exception):
    exit_code = 4


class ConfigError(StdGanError, ValueError):
    exit_code = 2


class DataError(StdGanError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class RegistryError(StdGanError, KeyError):
    exit_code = 3


class CheckpointError(StdGanError):
    exit_code = 4
