"""Exception and warning types raised across the package."""


class DWLError(Exception):
    """Base class for package errors."""


class ParameterError(DWLError, ValueError):
    """A hyperparameter or argument is outside its admissible range."""


class ShapeError(DWLError, ValueError):
    """Array shapes are inconsistent."""


class EmptyDocumentError(DWLError, ValueError):
    """A document has no tokens (all counts zero)."""


class EmptyCorpusError(DWLError, ValueError):
    pass


class CorpusFormatError(DWLError, ValueError):
    pass


class NumericalError(DWLError, FloatingPointError):
    """NaN, overflow or division by zero inside an iterative solver."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class CheckpointError(DWLError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ConvergenceWarning(UserWarning):
    """Sinkhorn stopped at ``max_iters`` before reaching the marginal tolerance."""

    def __init__(self, message, marginal_error=float("nan")):
        super().__init__(message)
        self.marginal_error = marginal_error
