"""Exception types raised across the package.

All of them derive from :class:`BCFError` so callers can catch the whole
family, and most also derive from :class:`ValueError` because they signal
bad numerical input.
"""


class BCFError(Exception):
    """Base class for every error raised by bcfilter."""


class GridMismatch(BCFError, ValueError):
    """Two densities (or a density and a kernel) live on different grids."""


class AllZero(BCFError, ValueError):
    """A density has no positive mass left to normalize."""


class NonFinite(BCFError, ValueError):
    """NaN or infinite values were supplied where a density was expected."""


class BadWeights(BCFError, ValueError):
    """Pooling or consensus weights are negative or do not sum to one."""


class KernelNotStochastic(BCFError, ValueError):
    """A transition kernel column does not integrate to one."""


class ZeroEvidence(BCFError, ValueError):
    """Prior times likelihood vanishes on every cell."""


class TooLarge(BCFError, ValueError):
    """An exhaustive enumeration would exceed its budget."""


class NotIrreducible(BCFError, ValueError):
    """The weight matrix (or digraph) is not strongly connected."""


class NoConvergence(BCFError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class Degenerate(BCFError, ValueError):
    """The input is too small or too collapsed for the requested quantity."""


class CannotBalance(BCFError, ValueError):
    """The requested weight rule cannot produce a doubly stochastic matrix."""


class PartitionViolation(BCFError, ValueError):
    """Tracking agents put weight on non-tracking agents."""


class Infeasible(BCFError, ValueError):
    """No consensus-loop count (or topology) satisfies the error budget."""


class TargetUnreachable(BCFError, RuntimeError):
    """A lossy codec could not reach its L1 error target.

    The best attempt is attached so the caller can decide whether to use it.
    """

    def __init__(self, message, best=None, achieved=None):
        super().__init__(message)
        self.best = best
        self.achieved = achieved


class ConfigError(BCFError, ValueError):
    """A scenario file failed validation.

    ``problems`` holds ``(field_path, message)`` pairs.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", problems)]
        self.problems = list(problems)
        lines = [f"{path}: {msg}" if path else msg for path, msg in self.problems]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))
