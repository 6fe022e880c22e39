from typing import Optional


class SimulatorError(Exception):
    """Base class for every error raised by the simulator"""


class InvalidConfigError(SimulatorError):
    """Invalid run configuration, parameter set or mesh request"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        prefix = ''
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)


class InvalidArgumentError(SimulatorError, ValueError):
    """Arguments that are individually valid but do not fit together"""


class LinearSolveError(SimulatorError):
    """A sparse linear solve failed or left a residual above tolerance"""


class StepSolveError(LinearSolveError):
    """The step system of one backward-Euler step could not be solved"""

    def __init__(self, message: str, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"step {step} (t={time:.6g}): {message}")


class SavDenominatorError(SimulatorError):
    """E1[u] + B is no longer bounded away from zero"""


class InvariantViolation(SimulatorError):
    """A structure-preservation check failed"""


class OutputError(SimulatorError):
    """Writing or reading a result file failed"""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{path}: {message}")
