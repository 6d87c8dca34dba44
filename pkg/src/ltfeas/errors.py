"""Exception hierarchy shared by the numerical kernels and the pipeline."""


class LtfeasError(Exception):
    """Base class for all package errors."""


class NumericalFailure(LtfeasError):
    """An iteration failed to converge."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DegenerateGeometry(LtfeasError):
    pass


class UnsupportedOrbit(LtfeasError):
    pass


class InfeasibleMass(LtfeasError):
    pass


class CatalogMiss(LtfeasError, KeyError):
    pass


class NoSolution(LtfeasError):
    pass


class SamplingFailure(LtfeasError):
    pass


class ExperimentError(LtfeasError):
    pass
