"""Named failure modes raised across the package."""


class GLError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GLError):
    """A matrix expected to lie in the SPD cone does not."""


class ConvergenceFailure(GLError):
    """An iterative linear-algebra routine did not converge."""


class SingularStep(GLError):
    """An Euler step produced a (numerically) singular matrix."""


class HorizonTooShort(GLError):
    """A truncation horizon is too short for the requested tail tolerance."""


class ConeExit(GLError):
    """An SPD-valued integrator left the cone too often."""


class OrderViolation(GLError):
    """A Loewner-order relation expected along a path failed."""


class CollisionOverflow(GLError):
    """Eigenvalue collisions were clamped too often."""


class KappaEvaluationFailure(GLError):
    """A matrix GIG mean could not be estimated accurately enough."""


class DomainError(GLError):
    """Argument outside the domain of a density or special function."""


class PoleError(GLError):
    """Gamma function evaluated at a pole."""


class MixingFailure(GLError):
    """A Markov chain did not mix (effective sample size too small)."""


class HighVariance(GLError):
    """Monte Carlo relative error above the accepted threshold."""


class StepTooSmall(GLError):
    """Finite-difference step dominated by evaluation noise."""


class InsufficientSamples(GLError):
    """Too few samples for a statistical test."""


class InsufficientNeighbors(GLError):
    """Too few paths in a conditioning neighbourhood."""


class ConfigError(GLError):
    """Experiment configuration failed validation."""


class UnderflowToZero(UserWarning):
    """A special-function value underflowed; use the log-scale variant."""
