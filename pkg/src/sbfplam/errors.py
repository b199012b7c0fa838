"""Exception hierarchy shared by the estimation modules."""


class SbfPlamError(Exception):
    """Base class for domain and numerical errors (CLI exit code 2)."""


class InvalidBandwidthError(SbfPlamError, ValueError):
    pass


class EmptySampleError(SbfPlamError, ValueError):
    pass


class DegenerateWindowError(SbfPlamError):
    """A kernel-weighted denominator fell below the degeneracy guard.

    ``indices`` holds the offending grid indices (marginal smoothers) or
    evaluation rows (full-dimensional smoother).
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class SparseRegionError(SbfPlamError):
    def __init__(self, message, coordinate, grid_index):
        super().__init__(message)
        self.coordinate = coordinate
        self.grid_index = grid_index


class ConvergenceError(SbfPlamError):
    def __init__(self, message, final_delta, iterations):
        super().__init__(message)
        self.final_delta = final_delta
        self.iterations = iterations


class SingularSystemError(SbfPlamError):
    pass


class ConcurvityError(SbfPlamError):
    def __init__(self, message, min_eigenvalue=None, condition_number=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.condition_number = condition_number


class InformationError(SbfPlamError):
    """Estimated information matrix is not invertible."""


class ConstantColumnError(SbfPlamError, ValueError):
    pass


class SamplerError(SbfPlamError):
    pass
