"""Exception types shared across the package."""


class BilevelError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolationError(BilevelError):
    """An argument violated a documented precondition (shape, range, index)."""


class DegenerateHalfspaceError(BilevelError):
    """A halfspace with a zero normal was used where a proper one is required."""


class InfeasibleRegionError(BilevelError):
    """A projection target turned out to be empty.

    For solver-level failures, carries the iteration index, the lower-level
    value at the anchor point, and the cut level that produced the empty set.
    """

    def __init__(self, message, k=None, anchor_value=None, level=None):
        super().__init__(message)
        self.k = k
        self.anchor_value = anchor_value
        self.level = level


class DykstraNonConvergenceError(BilevelError):
    """Dykstra's scheme hit the sweep cap before reaching tolerance."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class DivergenceError(BilevelError):
    """A non-finite objective or iterate appeared during a run."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EstimationError(BilevelError):
    """A numerical estimate (e.g. power iteration) failed to converge."""


class DegenerateCutError(BilevelError):
    """The cut anchor is stationary but sits above the requested level."""


class CapabilityError(BilevelError):
    """A (nonsmooth term, cut set) combination has no shipped proximal map."""


class ConfigError(BilevelError):
    """Invalid run configuration; carries the offending key path."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
