"""Exception types raised across the package."""


class StaggerError(Exception):
    """Base class for package errors."""


class SchemaError(StaggerError, ValueError):
    """Input data does not conform to the panel schema."""


class DesignError(StaggerError, ValueError):
    """An event-time or fixed-effect design is invalid for the panel."""


class ConvergenceError(StaggerError, RuntimeError):
    """An iterative routine failed to converge."""


class EstimationError(StaggerError, RuntimeError):
    """An estimator cannot produce estimates on the given input."""


class OutOfRegionError(StaggerError, ValueError):
    """A model parameter lies outside the region where the closed forms hold."""


class MonteCarloError(StaggerError, RuntimeError):
    """Too many Monte Carlo replications failed."""
