"""Exception types shared across the numerical modules."""
import numpy as np


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """An operator, block or matrix that must be positive definite is not.

    ``where`` locates the failure: a Fourier bin ``(a, b)`` for circulant
    factorisations, a pivot index for dense Cholesky, an iteration number
    for conjugate-gradient breakdown.
    """

    def __init__(self, msg: str, where=None):
        super().__init__(msg)
        self.where = where


class TrainingError(RuntimeError):
    """A training back-end failed; ``method`` names it, ``__cause__`` holds the solver error."""

    def __init__(self, msg: str, method: str):
        super().__init__(msg)
        self.method = method
