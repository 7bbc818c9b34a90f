"""Exception hierarchy shared by the simulator, estimators and learners."""


class PicekitError(Exception):
    """Base class for all picekit errors."""


class ConfigurationError(PicekitError, ValueError):
    """Inconsistent or invalid problem / policy / run configuration."""


class RolloutDiverged(PicekitError):
    """A trajectory produced a non-finite or out-of-bounds value."""

    def __init__(self, trajectory: int, step: int, reason: str):
        self.trajectory = trajectory
        self.step = step
        self.reason = reason
        super().__init__(f"rollout diverged in trajectory {trajectory} at step {step}: {reason}")


class EstimationFailed(PicekitError):
    """No usable importance weights (every path cost is non-finite)."""


class IllConditioned(PicekitError):
    """Singular moment matrix in a closed-form parameter solve."""

    def __init__(self, message: str, time_index: int | None = None):
        self.time_index = time_index
        super().__init__(message)
