"""Exception types shared across the package."""


class CalderonError(Exception):
    """Base class for numerical failures."""


class SolverError(CalderonError):
    """An ODE, linear or fixed-point solve did not converge."""


class EllipticityError(CalderonError, ValueError):
    """A conductivity fell below its ellipticity floor."""


class InvertibilityFailure(CalderonError):
    """A dense operator was numerically singular.

    ``condition`` carries the estimated condition number.
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class ResolutionError(CalderonError, ValueError):
    """The requested discretisation cannot resolve the object asked for."""


class QuadratureError(CalderonError):
    """Kernel quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=float("nan")):
        super().__init__(message)
        self.achieved = achieved


class ConfigError(CalderonError, ValueError):
    """Malformed or inconsistent configuration."""


class StageFailure(CalderonError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
