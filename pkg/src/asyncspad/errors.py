"""Exception types raised across the package."""


class BudgetError(ValueError):
    """The acquisition time budget cannot hold the requested cycles."""


class InstanceTooLarge(ValueError):
    """Exact enumeration was requested for an instance that is too big."""


class EstimationError(RuntimeError):
    """No histogram bin had a detection opportunity, so nothing can be estimated."""


class StreamFormatError(ValueError):
    """A timestamp stream file is malformed.

    ``line`` holds the 1-based line number of the offending row (0 when the
    problem is not tied to a row).
    """

    def __init__(self, message, line=0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line
