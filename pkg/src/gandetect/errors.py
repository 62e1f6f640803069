"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Input has the wrong shape, length, or resolution."""


class StageError(RuntimeError):
    """Invalid progressive-stage transition (e.g. growing past the top stage)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class SamplingError(RuntimeError):
    """Patch sampling could not satisfy its constraints.

    ``achieved`` carries the number of patches found before giving up.
    """

    def __init__(self, message, achieved=0):
        super().__init__(message)
        self.achieved = achieved


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. constant volume)."""
