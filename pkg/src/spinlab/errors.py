"""Exception types shared across the package."""


class SpinlabError(Exception):
    """Base class for all package errors."""


class ValidationError(SpinlabError, ValueError):
    """Invalid input: a violated invariant of a mixture, measure or config."""


class NonPositiveScale(SpinlabError, ArithmeticError):
    """Some 1 + S_p <= 0, so the quadratic Cole-Hopf recursion breaks down."""


class BudgetExceeded(SpinlabError):
    """Requested sizes exceed a configured memory/compute cap."""


class QuadratureOverflow(SpinlabError, ArithmeticError):
    """A Gauss-Hermite integrand left the floating point range."""


class QuadratureFailure(SpinlabError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class UnstableScheme(SpinlabError):
    """Finite-difference step ratios violate the stability bound."""


class OutOfWindow(SpinlabError, ValueError):
    """Evaluation point lies outside a finite-difference grid."""


class GridMisaligned(SpinlabError, ValueError):
    """Atoms of the overlap measure do not fall on the time grid."""
