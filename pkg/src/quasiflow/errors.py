"""Exception types shared across the pipeline."""


class QuasiflowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QuasiflowError):
    pass


class DataError(QuasiflowError):
    pass


class SchemaError(DataError):
    def __init__(self, column: str, path=None):
        self.column = column
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing column {column!r}{where}")


class RowError(DataError):
    def __init__(self, line: int, column: str, value):
        self.line = line
        self.column = column
        super().__init__(f"line {line}: cannot parse {column}={value!r}")


class StageError(QuasiflowError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
