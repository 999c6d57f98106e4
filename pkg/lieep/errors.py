"""
==============================================================================
Error Types Module (errors.py)
==============================================================================
Description: Exception hierarchy shared by the kernel, schemes and harness

Main Features:
    - LieepError: Common base, carries a short ``kind`` tag for CSV rows
    - Input errors: InvalidInputError, ShapeError, WindowError, ...
    - Integration errors: StepSingularityError, DivergenceError,
      NonConvergenceError

==============================================================================
"""

from typing import Optional


class LieepError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"


class InvalidInputError(LieepError, ValueError):
    """Non-finite or otherwise unusable numeric input."""

    kind = "invalid_input"


class ShapeError(LieepError, ValueError):
    """Dimensions of matrices/vectors do not agree."""

    kind = "shape"


class WindowError(ShapeError):
    """Step window length does not match the polarization window."""

    kind = "window"


class MatrixOverflowError(LieepError, OverflowError):
    """Overflow while evaluating a matrix function."""

    kind = "overflow"

    def __init__(self, norm: float):
        self.norm = norm
        super().__init__(f"Matrix function overflowed for ||A||_inf = {norm:.6g}")


class UnsupportedDegreeError(LieepError, ValueError):
    """Polynomial degree outside the built-in polarization list."""

    kind = "unsupported_degree"


class StructureError(LieepError, ValueError):
    """J or M violates the structure its class promises."""

    kind = "structure"


class ParameterError(LieepError, ValueError):
    """Problem parameters outside their admissible range."""

    kind = "parameter"


class AlignmentError(LieepError, ValueError):
    """Trajectories compared on different time grids."""

    kind = "alignment"


class InsufficientDataError(LieepError, ValueError):
    kind = "insufficient_data"


class ConfigError(LieepError, ValueError):
    """Experiment configuration is malformed."""

    kind = "config"


# ==============================================================================
# Integration Errors
# ==============================================================================

class IntegrationError(LieepError, RuntimeError):
    """A time step could not be completed."""

    kind = "integration"


class StepSingularityError(IntegrationError):
    """The linear step matrix of the linearly implicit scheme is singular."""

    kind = "step_singularity"

    def __init__(self, h: float, condition: float):
        self.h = h
        self.condition = condition
        super().__init__(f"Step matrix singular at h={h:.6g} (condition estimate {condition:.3e})")


class DivergenceError(IntegrationError):
    kind = "divergence"

    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        super().__init__(message)


class NonConvergenceError(IntegrationError):
    """Fixed-point iteration hit its iteration cap."""

    kind = "non_convergence"

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"Fixed-point iteration did not converge in {iterations} iterations (residual {residual:.3e})")
