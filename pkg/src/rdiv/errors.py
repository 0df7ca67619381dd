"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite.

    ``batch`` holds the index of the offending mini-batch when known.
    """

    def __init__(self, message, batch=None):
        super().__init__(message)
        self.batch = batch


class ReplicaError(RuntimeError):
    """Wraps an estimator failure inside a permutation test."""

    def __init__(self, replica, cause):
        super().__init__(f"estimator failed on replica {replica}: {cause}")
        self.replica = replica
        self.cause = cause
