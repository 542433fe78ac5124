"""Exception types shared across the package."""


class LociLabError(Exception):
    """Base class for library errors."""


class EvaluatorError(LociLabError):
    """A model evaluator returned non-finite values or raised."""


class LegendreError(LociLabError):
    """Newton solve of the Legendre transform did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SourceError(LociLabError):
    """Source geometry failure (no admissible covector, degenerate frame)."""


class BeyondMaximalTime(LociLabError):
    """Requested time lies beyond the flow's maximal existence time."""


class FrameError(LociLabError):
    """Lagrangian frame construction or certification failure."""


class DensityError(LociLabError):
    """Characteristic family too sparse for the requested capture radius."""

    def __init__(self, message, widest_gap=None):
        super().__init__(message)
        self.widest_gap = widest_gap


class ScenarioError(LociLabError):
    """Scenario file invalid or inconsistent."""
