"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
the documented statuses: 1 usage/config, 2 data, 3 numerical.
"""


class HexEmbedError(Exception):
    exit_code = 2


class ConfigError(HexEmbedError):
    exit_code = 1


class InputDomainError(HexEmbedError, ValueError):
    """Argument outside the operation's domain (bad coordinates, k < 0, ...)."""

    exit_code = 1


class ShapeError(HexEmbedError, ValueError):
    exit_code = 2


class DataError(HexEmbedError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EmptyMatrixError(DataError):
    pass


class RegionLookupError(DataError, KeyError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"unknown region id: {region_id}")

    def __str__(self):
        return self.args[0]


class SamplingError(DataError):
    def __init__(self, target, message="no negative candidates"):
        self.target = target
        super().__init__(f"{message} for target {target}")


class QueryError(DataError):
    pass


class NumericalError(HexEmbedError):
    exit_code = 3


class UndefinedMeasureError(NumericalError, ValueError):
    """Cosine distance requested for a zero vector."""


class TrainingError(NumericalError):
    pass
