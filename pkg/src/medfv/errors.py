class MedFVError(RuntimeError):
    """Base class for solver failures."""


class LinearSolveError(MedFVError):
    """The pinned linear system could not be solved to the residual contract."""


class ConsistencyError(MedFVError):
    """A structural property guaranteed by the theory failed numerically."""


class PicardDivergence(MedFVError):
    """Picard iteration hit its iteration cap; ``report`` holds the history."""

    def __init__(self, message, report=None, field=None):
        super().__init__(message)
        self.report = report
        self.field = field
