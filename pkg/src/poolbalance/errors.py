"""Exception hierarchy.

Two broad families matter operationally: configuration problems (bad user
input, CLI exit code 2) and numerical failures (the model left its domain of
validity or an algorithm could not complete, CLI exit code 3).
"""


class PoolBalanceError(Exception):
    """Base class for all package errors."""


class ConfigError(PoolBalanceError):
    """Invalid configuration, parameters, or input files."""


class NumericalError(PoolBalanceError):
    """A computation failed or left its domain of validity."""


class TranscriticalError(NumericalError):
    """Flow reached or crossed the critical state where the model breaks down."""


class CFLError(NumericalError):
    """Requested time step violates the wave-speed stability bound."""


class BoundarySingularityError(NumericalError):
    """Transition-matrix boundary solve is singular at some frequency."""


class InfeasibleDesignError(NumericalError):
    """No compensator candidate satisfies the design criteria."""


class MarginalStabilityError(NumericalError):
    """Nyquist curve passes through the critical point; count undefined."""
