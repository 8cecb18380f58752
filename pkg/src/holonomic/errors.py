"""Exception hierarchy shared by all modules."""


class HolonomicError(Exception):
    """Base class for every error raised by this package."""


class DomainError(HolonomicError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(HolonomicError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(HolonomicError, RuntimeError):
    """A numerical procedure failed or left its accuracy envelope."""


class AdiabaticityError(NumericalError):
    """The projected gate leaks out of the logical subspace."""

    def __init__(self, message: str, leakage: float):
        super().__init__(message)
        self.leakage = leakage


class PositivityError(NumericalError):
    """The density matrix developed a negative eigenvalue beyond tolerance."""

    def __init__(self, message: str, time: float, min_eigenvalue: float):
        super().__init__(message)
        self.time = time
        self.min_eigenvalue = min_eigenvalue


class FitError(NumericalError):
    """The decay-law fit is ill-posed."""
