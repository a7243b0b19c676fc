"""Exception hierarchy shared across the package."""


class HierMatchError(Exception):
    """Base class for every error raised by hiermatch."""


class DegenerateInput(HierMatchError, ValueError):
    pass


class DimensionMismatch(HierMatchError, ValueError):
    pass


class EmptyCloud(HierMatchError, ValueError):
    pass


class EmptySet(HierMatchError, ValueError):
    pass


class EmptyDataset(HierMatchError, ValueError):
    pass


class MalformedFile(HierMatchError, ValueError):
    """A reader rejected its input; the message names the byte or line offset."""


class StageError(HierMatchError, RuntimeError):
    """Pipeline stage failure, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
