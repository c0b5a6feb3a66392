"""Exception types shared across the package."""


class BRWPError(Exception):
    """Base class for all library errors."""


class InvalidArgument(BRWPError, ValueError):
    pass


class NumericOverflowError(BRWPError, FloatingPointError):
    """A particle update produced a non-finite coordinate."""

    def __init__(self, message, particle_index=None):
        super().__init__(message)
        self.particle_index = particle_index


class DegenerateNormalizerError(BRWPError, FloatingPointError):
    """Every Monte Carlo sample of a kernel normalizer underflowed."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StepTooLargeError(BRWPError, ValueError):
    """A covariance update lost positive definiteness."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ReduceStepError(BRWPError, FloatingPointError):
    """ODE integration left the SPD cone; a smaller dt is needed."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class PreconditionError(BRWPError, ValueError):
    """A theorem hypothesis required by an analytic routine does not hold."""


class DivergenceError(BRWPError, FloatingPointError):
    pass


class ObserverError(BRWPError, RuntimeError):
    def __init__(self, message, iteration=None, observer=None):
        super().__init__(message)
        self.iteration = iteration
        self.observer = observer


class ConfigError(BRWPError, ValueError):
    """Invalid experiment configuration. ``path`` is the dotted field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
