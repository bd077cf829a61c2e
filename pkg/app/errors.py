from __future__ import annotations


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class ConfigurationError(LabError, ValueError):
    pass


class PreconditionError(LabError, ValueError):
    pass


class CoefficientEvaluationError(LabError, ArithmeticError):
    def __init__(self, x: float, value: float) -> None:
        super().__init__(f"coefficient returned non-finite value {value!r} at x={x!r}")
        self.x = x
        self.value = value


class QuadratureError(LabError, ArithmeticError):
    def __init__(self, message: str, achieved_tolerance: float) -> None:
        super().__init__(f"{message} (achieved tolerance {achieved_tolerance:.3g})")
        self.achieved_tolerance = achieved_tolerance


class SimulationError(LabError, ArithmeticError):
    def __init__(self, step: int, path_index: int | None = None) -> None:
        where = f" on path {path_index}" if path_index is not None else ""
        super().__init__(f"non-finite state at step {step}{where}")
        self.step = step
        self.path_index = path_index
