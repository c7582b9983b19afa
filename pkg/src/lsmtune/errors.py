"""Exception types raised across the package."""


class LsmTuneError(Exception):
    """Base class for all package errors."""


class DomainError(LsmTuneError, ValueError):
    """An input lies outside the domain of a cost-model formula."""


class InfeasibleBounds(LsmTuneError, ValueError):
    pass


class SolverFailed(LsmTuneError, RuntimeError):
    pass


class InvalidRegion(LsmTuneError, ValueError):
    pass


class DivergenceInfinite(LsmTuneError, ValueError):
    """KL divergence is infinite because the support condition fails."""


class EmptyHistory(LsmTuneError, ValueError):
    pass


class ZeroCost(LsmTuneError, ZeroDivisionError):
    pass


class CategoryUnsatisfiable(LsmTuneError, ValueError):
    pass


class InvalidRange(LsmTuneError, ValueError):
    pass
