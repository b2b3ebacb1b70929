"""Exception hierarchy for cavernsim.

Every error carries the process exit code the command line uses for it.
"""

from typing import List, Optional, Sequence


class CavernSimError(Exception):
    """Base class for all cavernsim errors."""

    exit_code = 1


# Validation (exit code 2)

class ValidationError(CavernSimError, ValueError):
    """Input that does not satisfy a documented invariant."""

    exit_code = 2


class MeshParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TopologyError(ValidationError):
    pass


class DegenerateElementError(TopologyError):
    def __init__(self, element: int, area: float):
        super().__init__(f"element {element} is degenerate (area={area:.3e} m^2)")
        self.element = element
        self.area = area


class GeometryError(ValidationError):
    """Infeasible cavern/domain geometry specification."""


class MaterialError(ValidationError):
    pass


class ScheduleError(ValidationError):
    pass


class ScenarioError(ValidationError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ProbeNotFoundError(CavernSimError, LookupError):
    def __init__(self, x: float, y: float):
        super().__init__(f"point ({x}, {y}) is outside the mesh")
        self.x = x
        self.y = y


# Solver failures (exit code 3)

class SolverError(CavernSimError):
    exit_code = 3


class AssemblyError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, step: int, t: float, residuals: Sequence[float], reason: Optional[str] = None):
        trace = ", ".join(f"{r:.3e}" for r in residuals)
        what = reason or f"did not converge in {len(residuals)} iterations"
        super().__init__(f"step {step} (t={t:.4g} day) {what}; residual trace: [{trace}]")
        self.reason = reason
        self.step = step
        self.t = t
        self.residuals = list(residuals)


class DamageSaturatedError(SolverError):
    def __init__(self, message: str, elements: Optional[List[int]] = None):
        super().__init__(message)
        self.elements = list(elements or [])


# Verification (exit code 4)

class VerificationGateError(CavernSimError):
    exit_code = 4


class AdmissibilityWarning(UserWarning):
    """Operating pressure outside the admissible storage window."""
