"""Exception hierarchy. The three families map onto CLI exit codes."""


class DrycssError(Exception):
    exit_code = 1


class UsageError(DrycssError):
    exit_code = 1


class DataError(DrycssError, ValueError):
    exit_code = 2


class NumericalError(DrycssError, ArithmeticError):
    exit_code = 3


# ---------------------------------------------------------------------------
# Grid store
# ---------------------------------------------------------------------------

class GridSpecError(DataError):
    pass


class CubeLoadError(DataError):
    def __init__(self, message: str, variable: str | None = None):
        super().__init__(message)
        self.variable = variable


class MissingVariableError(CubeLoadError):
    pass


class ArrayLengthError(CubeLoadError):
    pass


class MetadataError(CubeLoadError):
    pass


class NonFiniteValueError(CubeLoadError):
    pass


class CubeExistsError(UsageError):
    pass


class OutOfBoundsError(DataError):
    pass


class MaskedPixelError(DataError):
    pass


class NdviRangeError(DataError):
    pass


class NdviCoverageError(DataError):
    def __init__(self, missing_years: list[int]):
        super().__init__(
            f"no NDVI observations between day 80 and 256 for years {missing_years}"
        )
        self.missing_years = missing_years


class RegridError(DataError):
    pass


class GridMismatchError(DataError):
    pass


# ---------------------------------------------------------------------------
# Features and models
# ---------------------------------------------------------------------------

class DimensionMismatchError(DataError):
    pass


class SelectionError(DataError):
    pass


class LineageError(DataError):
    pass


class BlupSolverError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, learning_rate: float, what: str = "network"):
        super().__init__(
            f"{what} training diverged at epoch {epoch} (learning rate {learning_rate:g})"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class CalibrationError(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Candidates, CLI
# ---------------------------------------------------------------------------

class AttributeJoinError(DataError):
    pass


class RuleError(DataError):
    pass


class ArtifactMissingError(DataError):
    def __init__(self, path, stage: str):
        super().__init__(f"missing artifact {path} (run `drycss {stage}` first)")
        self.path = path
        self.stage = stage
