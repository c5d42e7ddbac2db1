"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class NewtonFlowError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteEvaluation(NewtonFlowError):
    """A field or map produced NaN/Inf inside the working domain."""

    def __init__(self, x, label: str = "map"):
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.label = label
        super().__init__(f"{label} evaluated to a non-finite value at x={self.x}")


class SingularJacobian(NewtonFlowError):
    """Jacobian is singular or ill-conditioned at the given point."""

    def __init__(self, x, cond: float = float("inf")):
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.cond = float(cond)
        self.time: float | None = None
        super().__init__(
            f"Jacobian singular or ill-conditioned at x={self.x} (cond={cond:.3e})"
        )


class IndefiniteInformation(NewtonFlowError):
    """Information matrix is not positive definite at the given point."""

    def __init__(self, x, minor_index: int):
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.minor_index = int(minor_index)
        self.time: float | None = None
        super().__init__(
            f"information matrix not positive definite at x={self.x} "
            f"(leading minor {minor_index} non-positive)"
        )


class NonConvergence(NewtonFlowError):
    """Iterative solver failed to converge; carries the last iterate."""

    def __init__(self, last_iterate, iterations: int, score_norm: float, reason: str):
        self.last_iterate = np.asarray(last_iterate, dtype=float)
        self.iterations = int(iterations)
        self.score_norm = float(score_norm)
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(score inf-norm {score_norm:.3e}): {reason}"
        )


class StabilityError(NewtonFlowError):
    """Requested time step violates the explicit stability bound."""

    def __init__(self, dt: float, dt_max: float):
        self.dt = float(dt)
        self.dt_max = float(dt_max)
        super().__init__(f"dt={dt:g} exceeds stable bound {dt_max:g}; refusing to step")


class SchemeError(NewtonFlowError):
    """The transport update produced a significantly negative density."""

    def __init__(self, min_value: float, time: float):
        self.min_value = float(min_value)
        self.time = float(time)
        super().__init__(
            f"transport step at t={time:g} produced density {min_value:.3e} < -1e-14"
        )


class GridTooSmall(NewtonFlowError):
    """Grid does not hold enough of the requested density's mass."""

    def __init__(self, coverage: float, suggested_lower, suggested_upper):
        self.coverage = float(coverage)
        self.suggested_lower = np.asarray(suggested_lower, dtype=float)
        self.suggested_upper = np.asarray(suggested_upper, dtype=float)
        super().__init__(
            f"grid holds only {coverage:.6f} of the density mass (< 0.999); "
            f"suggested extents lower={self.suggested_lower}, "
            f"upper={self.suggested_upper}"
        )


class ConfigError(NewtonFlowError):
    """Invalid run configuration; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
