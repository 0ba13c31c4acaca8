import numpy as np


class ParameterError(ValueError):
    """Process parameters or call arguments outside the admissible range."""


class GuardError(ValueError):
    """A feasibility guard (level/memory limit) would be exceeded."""


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest scheduled jitter."""
