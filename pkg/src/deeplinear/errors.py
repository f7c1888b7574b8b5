"""Exception hierarchy shared by all modules."""


class DeepLinearError(Exception):
    """Base class for errors raised by this package."""


class DegenerateInputError(DeepLinearError, ValueError):
    """Input is structurally degenerate (e.g. the zero matrix)."""


class ConvergenceError(DeepLinearError, RuntimeError):
    """An iterative routine ran out of its iteration budget."""


class SeparabilityError(DeepLinearError, ValueError):
    """The dataset is not linearly separable through the origin."""


class AssumptionViolation(DeepLinearError, ValueError):
    """A precondition required by the theory does not hold."""


class NumericalFailure(DeepLinearError, RuntimeError):
    """Non-finite values appeared during training.

    ``state`` carries whatever diagnostic context was available when the
    failure was detected (last good parameters, step index, ...).
    """

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


class StiffnessError(NumericalFailure):
    """Adaptive integrator step size underflowed."""


class InvariantViolation(DeepLinearError, RuntimeError):
    """A proven invariant (monotone risk, step budget, ...) was violated."""


class DatasetFormatError(DeepLinearError, ValueError):
    """Malformed dataset or trajectory file; message names the line."""
