"""Exception types raised by the numerical routines."""


class CocycleError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CocycleError, ValueError):
    pass


class DegenerateGap(CocycleError):
    """Singular values at the requested index are not separated."""

    def __init__(self, j, ratio, message=None):
        self.j = j
        self.ratio = ratio
        super().__init__(message or f"no singular value gap at index {j}: s_j/s_(j+1) = {ratio:.6g}")


class RankDeficient(CocycleError):
    """The j-th singular value vanishes, so the top space is undefined."""

    def __init__(self, j, message=None):
        self.j = j
        super().__init__(message or f"s_{j} is zero; top space of dimension {j} undefined")


class TransversalityFailure(CocycleError):
    """A subspace meets the complement of a chart and has no chart coordinates."""


class ChartEscape(CocycleError):
    """A fractional linear image leaves the target chart (W + X B singular)."""

    def __init__(self, cond, message=None):
        self.cond = cond
        super().__init__(message or f"image leaves the chart: condition number {cond:.3g}")


class WindowUnderrun(CocycleError, IndexError):
    """A noise window does not cover the requested time indices."""


class SamplerError(CocycleError):
    """Rejection sampler acceptance rate collapsed."""


class ConfigError(CocycleError, ValueError):
    pass
