"""Exception hierarchy shared by all katolab modules."""


class KatoLabError(Exception):
    """Base class for every error raised by katolab."""


class GridMismatch(KatoLabError, ValueError):
    pass


class NotElliptic(KatoLabError, ValueError):
    """The Hermitian part of the coefficient matrix is not positive."""


class SolverBreakdown(KatoLabError, RuntimeError):
    pass


class FactorizationFailure(KatoLabError, RuntimeError):
    """Computed spectrum leaves the closed right half-plane."""


class NegativePowerOnKernel(KatoLabError, ValueError):
    pass


class TGridTooNarrow(KatoLabError, ValueError):
    pass


class ZeroGradient(KatoLabError, ValueError):
    pass


class RootStopped(KatoLabError, ValueError):
    """The stopping-time test already fails on the root cube."""


class ContractViolation(KatoLabError, RuntimeError):
    """A user-supplied stopping rule broke its own stated contract."""


class ConfigError(KatoLabError, ValueError):
    pass


class NotSelfAdjoint(KatoLabError, ValueError):
    """The operation is defined for Hermitian coefficients only."""
