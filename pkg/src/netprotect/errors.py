"""Exception types raised across the package."""


class ModelError(ValueError):
    """Invalid network model parameters or matrices."""


class SingularSystemError(ModelError):
    """``I - Lambda`` is singular or too close to singular to solve reliably."""


class CentralityError(ValueError):
    """A centrality vector violates its contract (zero entries, bad ordering)."""


class InfeasibleBudgetError(ValueError):
    """Protection budget below ``sqrt(n)``: even ``q = 1`` does not fit."""


class InputFormatError(ValueError):
    """Malformed input file."""


class ConvergenceError(RuntimeError):
    """An iterative procedure did not converge within its step limit."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual
