"""Exception hierarchy shared by all stages."""


class InvFiltError(Exception):
    """Base class for library errors."""


class ValidationError(InvFiltError, ValueError):
    """Input is malformed (shape, stochasticity, index range)."""


class ZeroLikelihoodError(InvFiltError):
    """The filter normalizer vanished: the observation has zero probability."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StageError(InvFiltError):
    """A pipeline stage failed. ``stage`` names the stage."""

    stage = "unknown"

    def __init__(self, message, stage=None, **details):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        self.details = details


class NotIdentifiableError(StageError):
    """The data do not pin down a one-dimensional direction for some symbol."""

    stage = "identifiability"


class RelaxationError(StageError):
    """The convex relaxation or the clustering built on it failed."""

    stage = "relaxation"


class FactorizationError(StageError):
    """Directions could not be factorized into stochastic matrices."""

    stage = "factorization"


class ClusteringError(RelaxationError):
    """Spherical k-means could not produce the requested number of clusters."""

    stage = "clustering"


class ModelAssumptionError(StageError):
    """A modeling assumption (rank or positivity) does not hold."""

    stage = "validate"
