"""Exception hierarchy shared by all cardiowave modules."""


class CardiowaveError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CardiowaveError):
    """Invalid or incomplete configuration input."""


class ValidationError(CardiowaveError):
    """A value violates a documented invariant (non-positive geometry, ...)."""


class TopologyError(CardiowaveError):
    """Inconsistent network or surface connectivity."""


class FormatError(CardiowaveError):
    """Malformed tabular input file."""


class DomainError(CardiowaveError):
    """Argument outside the mathematical domain of an operator."""


class StabilityError(CardiowaveError):
    """Requested time step violates the CFL bound."""


class SolverBlowup(CardiowaveError):
    """State left the physical domain (negative area, NaN) during stepping."""


class JunctionError(CardiowaveError):
    """Local junction Newton solve failed to converge."""


class StateError(CardiowaveError):
    """Snapshot does not match the network it is restored into."""


class GeometryError(CardiowaveError):
    """Mesh generator parameters describe an invalid solid."""


class InvertedElementError(CardiowaveError):
    """det F <= 0 in at least one element."""


class AtreticValveError(CardiowaveError):
    """Effective valve area is non-positive."""


class SingularCouplingError(CardiowaveError):
    """Reduced pressure system of the block solve is singular."""


class LinearSolveError(CardiowaveError):
    """Inner Krylov solve did not reach the requested tolerance."""


class NewtonDivergence(CardiowaveError):
    """Coupled Newton loop exhausted its iteration budget.

    Carries the residual history of the failed step.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class MetricsError(CardiowaveError):
    """Trace too short or malformed for metric extraction."""
