"""Exception types raised across the package."""

from __future__ import annotations


class ResilienceError(Exception):
    """Base class for all errors raised by :mod:`resilience`."""


class NonFiniteState(ResilienceError):
    """A trajectory produced NaN/inf or crossed the divergence norm bound."""


class StepSizeUnderflow(ResilienceError):
    """The adaptive step-size controller stalled."""


class OutsideGrid(ResilienceError):
    pass


class EmptyStore(ResilienceError):
    pass


class UnknownAttractor(ResilienceError):
    pass


class EmptyBasin(ResilienceError):
    """A measure needs at least one resolved initial condition in the basin."""


class UnstableMatrix(ResilienceError):
    """Amplification is unbounded because the spectral abscissa is >= 0."""


class NoAttractorsFound(ResilienceError):
    pass


class SingularDenominator(ResilienceError):
    pass


class ConfigError(ResilienceError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
