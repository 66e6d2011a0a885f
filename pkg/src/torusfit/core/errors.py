"""Exceptions raised by the numerical core."""


class DegenerateTorusError(RuntimeError):
    """The frequency normal matrix is singular or badly conditioned."""


class NonFiniteResidualError(ArithmeticError):
    """Residuals are not finite at the starting point of a fit."""


class IntegrationError(RuntimeError):
    """The orbit integrator could not continue (step underflow or step budget)."""


class SectionError(RuntimeError):
    """No section crossing was found on a constructed torus within the period budget."""
