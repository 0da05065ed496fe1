"""Exception types shared across the toolkit."""


class LuskinError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(LuskinError):
    """Schema is malformed or does not match the data it is used with."""


class EmptyGroupError(LuskinError):
    """A group required to be non-empty came back empty after filtering."""


class NotFittedError(LuskinError):
    """A transform was applied before being fitted."""


class TrainingError(LuskinError):
    """Training diverged or was configured with degenerate inputs.

    ``iteration`` is the optimizer step at which the problem was detected,
    or None for configuration errors raised before the first step.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
