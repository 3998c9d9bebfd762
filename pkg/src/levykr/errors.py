"""Exception hierarchy for levykr."""


class LevyKRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LevyKRError, ValueError):
    """Invalid parameters, presets or config files."""


class NumericalError(LevyKRError, ArithmeticError):
    """A numerical kernel produced non-finite output."""


class ResolutionError(NumericalError):
    """Requested scale is not resolved by the grid."""


class CFLViolation(NumericalError):
    """Time step violates a stability condition of the grid solver."""


class InfeasibleMarginals(LevyKRError, ValueError):
    """Marginal masses of a transport problem disagree."""


class HypothesisViolation(LevyKRError, ValueError):
    """Coefficients fail the integrability hypotheses of the stability bound."""
