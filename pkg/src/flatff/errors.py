"""Exception types shared across the package."""


class FlatffError(Exception):
    """Base class for all package-specific errors."""


class DegenerateThrustError(FlatffError):
    """Commanded acceleration vector too small to define an attitude."""


class DegenerateAttitudeError(FlatffError):
    """Body z-axis too close to the yaw-frame singularity."""


class NewtonConvergenceError(FlatffError):
    """Newton iteration exhausted its budget without meeting tolerance."""


class SingularJacobianError(FlatffError):
    """The inversion Jacobian is singular or numerically unusable."""


class SingularSystemError(FlatffError):
    """Least-squares normal equations are rank deficient."""


class InvalidLogError(FlatffError):
    """Run log does not satisfy the assumptions of a consumer."""


class ConfigError(FlatffError):
    """Experiment configuration file is malformed.

    Attributes:
        line: 1-based line number of the offending entry, or None.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SimulationAbort(FlatffError):
    """Closed-loop run aborted by a controller failure.

    Attributes:
        step: index of the simulation step that failed.
    """

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"controller failed at step {step}: {cause}")
        self.step = step
        self.cause = cause
