class TreeBoundsError(Exception):
    """Base class for every error raised by treebounds."""


# Model errors


class ModelError(TreeBoundsError):
    pass


class TreeStructureError(ModelError):
    pass


class CycleDetected(TreeStructureError):
    pass


class Disconnected(TreeStructureError):
    pass


class DuplicateEdge(TreeStructureError):
    pass


class DuplicateNode(TreeStructureError):
    pass


class UnknownNode(TreeStructureError):
    pass


class ProbabilityOutOfRange(ModelError):
    pass


class FrechetViolation(ModelError):
    """An edge joint probability lies outside its Frechet interval."""

    def __init__(self, edge, inequality, x=None):
        self.edge = edge
        self.inequality = inequality
        self.x = x
        where = f" at x={x!r}" if x is not None else ""
        super().__init__(f"edge {edge[0]}-{edge[1]} violates {inequality}{where}")


class DegenerateConditioning(ModelError):
    pass


class GridError(ModelError):
    pass


# Solver errors


class SolverError(TreeBoundsError):
    pass


class NumericalFailure(SolverError):
    pass


class SolverFailure(SolverError):
    pass


# Query errors


class InvalidInput(TreeBoundsError, ValueError):
    """A query whose arguments do not fit the model."""


class InfeasibleCardinality(TreeBoundsError):
    pass


class NegativeWeight(TreeBoundsError):
    pass


class SizeCap(TreeBoundsError):
    pass


class InvariantBreach(TreeBoundsError):
    pass
