"""Exception hierarchy shared by the library and the command line.

Every error carries a symbolic ``code`` and the process ``exit_code`` the CLI
uses when the error escapes a command.
"""

EXIT_TO_CODE = {
    2: "BAD_INPUT",
    3: "IO_FAILURE",
    4: "SOLVER_FAILURE",
    5: "METRIC_PRECONDITION",
}


def code_for(exit_code: int) -> str:
    return EXIT_TO_CODE.get(exit_code, f"EXIT_{exit_code}")


class AdaptError(Exception):
    code = "ADAPT_ERROR"
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidConfigError(AdaptError):
    code = "INVALID_CONFIG"
    exit_code = 2


class DimensionMismatchError(AdaptError):
    code = "DIMENSION_MISMATCH"
    exit_code = 2


class InvalidDataError(AdaptError):
    code = "INVALID_DATA"
    exit_code = 2


class DataIOError(AdaptError):
    code = "IO_FAILURE"
    exit_code = 3


class ConvergenceError(AdaptError):
    """Raised when an iterative solver hits its iteration cap."""
    code = "NOT_CONVERGED"
    exit_code = 4

    def __init__(self, message: str, objective: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.objective = objective
        self.iterations = iterations


class InfeasibleSetError(AdaptError):
    code = "INFEASIBLE"
    exit_code = 4


class MetricPreconditionError(AdaptError):
    code = "METRIC_PRECONDITION"
    exit_code = 5
