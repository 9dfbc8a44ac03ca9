"""Exception hierarchy shared by the library and the CLI."""


class RfImputeError(Exception):
    """Base class for all package errors."""


class DataError(RfImputeError):
    """Malformed or invalid input data. The CLI maps this to exit code 1."""


class ConfigError(RfImputeError):
    """Invalid parameters or configuration. The CLI maps this to exit code 2."""


class RangeError(DataError):
    def __init__(self, row: int, variable: str, value, lower, upper):
        self.row = row
        self.variable = variable
        self.value = value
        super().__init__(
            f"row {row}: {variable}={value} outside declared range [{lower}, {upper}]"
        )


class TrainingDivergedError(RfImputeError):
    def __init__(self, cycle: int, loss: float):
        self.cycle = cycle
        self.loss = loss
        super().__init__(f"training diverged at cycle {cycle} (loss={loss})")


class NonFiniteObjectiveError(RfImputeError):
    def __init__(self, individual, value):
        self.individual = individual
        self.value = value
        super().__init__(f"objective returned {value} for individual {list(individual)}")


class ReproducibilityError(RfImputeError):
    """Replayed output digests differ from those recorded in a manifest."""
