class CapabilityError(RuntimeError):
    """A request exceeds an enumeration or memory bound."""


class TrainingDiverged(RuntimeError):
    """Parameters became non-finite or exceeded the magnitude guard.

    ``trace`` holds the measurements recorded before the failure, when
    raised from :func:`rbmstop.training.train`.
    """

    def __init__(self, epoch: int, reason: str, trace=None):
        super().__init__(f"training diverged at epoch {epoch}: {reason}")
        self.epoch = epoch
        self.reason = reason
        self.trace = trace


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
