"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or channel dimensions are inconsistent."""


class WellPosednessError(RuntimeError):
    """A feedback interconnection has no well-posed solution."""

    def __init__(self, message, min_singular_value=None):
        super().__init__(message)
        self.min_singular_value = min_singular_value


class AlgebraicLoopError(WellPosednessError):
    """The static algebraic loop of an interconnection is singular."""


class UnstableClosedLoopError(RuntimeError):
    """An operation that requires a stable closed loop met an unstable one."""

    def __init__(self, message, spectral_abscissa=None):
        super().__init__(message)
        self.spectral_abscissa = spectral_abscissa


class DerogatoryEigenvalueError(RuntimeError):
    """An active eigenvalue is defective; eigenvalue derivatives are unreliable."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or stagnated."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class OracleDomainError(RuntimeError):
    """The descent solver's objective is undefined at the requested point."""


class SynthesisFailureError(RuntimeError):
    """Controller synthesis could not produce a usable controller."""

    def __init__(self, message, scenarios=None):
        super().__init__(message)
        self.scenarios = scenarios if scenarios is not None else []
