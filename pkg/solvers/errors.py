"""Error hierarchy shared by every solver stage.

Each error names the stage that raised it, so the CLI can report
``NoConvergence in radial.solve_phi: ...`` and pick the exit code.
"""


class OverdeterminedError(Exception):
    """Base class. ``stage`` is a dotted ``module.operation`` name."""

    def __init__(self, detail: str, stage: str = ""):
        super().__init__(detail)
        self.detail = detail
        self.stage = stage

    def __str__(self) -> str:
        name = type(self).__name__
        if self.stage:
            return f"{name} in {self.stage}: {self.detail}"
        return f"{name}: {self.detail}"


# -------------------------------------------------
# VALIDATION (exit code 2)
# -------------------------------------------------
class ValidationError(OverdeterminedError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class ExpressionSyntaxError(ValidationError):
    def __init__(self, detail: str, position: int, stage: str = "expr.parse"):
        super().__init__(f"{detail} at position {position}", stage)
        self.position = position


class UnknownIdentifier(ValidationError):
    def __init__(self, name: str, position: int, stage: str = "expr.parse"):
        super().__init__(f"unknown identifier '{name}' at position {position}", stage)
        self.name = name
        self.position = position


class NotSPD(ValidationError):
    pass


class NotTorsion(ValidationError):
    pass


# -------------------------------------------------
# EVALUATION
# -------------------------------------------------
class ExpressionDomainError(OverdeterminedError):
    """Evaluation left the expression's domain (log of a non-positive, 1/0, overflow)."""

    exit_code = 3


# -------------------------------------------------
# SOLVERS (exit code 3)
# -------------------------------------------------
class SolverError(OverdeterminedError):
    exit_code = 3


class NoConvergence(SolverError):
    pass


class ProfileNegative(SolverError):
    pass


class ModeSolveFailure(SolverError):
    pass


class ModeNearZero(SolverError):
    pass


class NewtonDiverged(SolverError):
    pass


class MapDegenerate(SolverError):
    pass


class ShapeNewtonDiverged(SolverError):
    pass


class PointNewtonDiverged(SolverError):
    pass


class DegenerateCriticalPoint(SolverError):
    pass


class InadmissibleData(SolverError):
    pass
