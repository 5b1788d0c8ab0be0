class ValidationError(ValueError):
    """Raised when an input violates a documented constraint.

    ``field`` names the offending parameter when there is one.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DatasetError(RuntimeError):
    """A corpus on disk is missing, corrupt or inconsistent."""


class CheckpointError(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    """Non-finite loss during training; carries the loss history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)
