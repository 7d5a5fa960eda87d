"""Exception types shared across the package."""


class QuantracerError(Exception):
    """Base class for all errors raised by this package."""


class NonConvergence(QuantracerError):
    """Adaptive quadrature ran out of subdivisions before meeting its tolerance.

    Carries the best available estimate and its error bound so callers can
    decide whether to accept a degraded result.
    """

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


class NoSignChange(QuantracerError):
    """Root bracket does not straddle a sign change; caller must expand it."""


class StepUnderflow(QuantracerError):
    """ODE stepper needed a step below machine scale (near-singular velocity).

    Carries the last accepted state so callers can recover or report it.
    """

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class InvalidRange(QuantracerError):
    """Requested interval is empty or inverted."""


class DegenerateK(QuantracerError):
    """Scattering mode requested for a non-positive wave number."""


class GridTooCoarse(QuantracerError):
    """Wave-number grid cannot resolve the oscillation at the requested (x, t)."""


class NormBelowP(QuantracerError):
    """The remaining total probability is below the requested quantile level.

    ``t_end`` is the time at which the norm crossed the level, when known.
    """

    def __init__(self, message, t_end=None):
        super().__init__(message)
        self.t_end = t_end


class VelocitySingular(QuantracerError):
    """Probability density fell below the evaluation floor; j/rho unreliable."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x
