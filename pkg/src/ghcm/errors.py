"""Exception hierarchy shared across the package."""


class GHCMError(Exception):
    """Base class for all package-specific errors."""


class KindMismatch(GHCMError):
    """Two distributions of different kinds were compared."""


class DomainError(GHCMError):
    """An argument fell outside its documented domain."""


class TooManyCommunities(GHCMError):
    """Factorial enumeration guard tripped (k > 8)."""


class InfeasibleRegime(GHCMError):
    """Block-partition constants do not exist for these parameters."""


class DegenerateGrid(GHCMError):
    """Fewer than two blocks per axis."""


class Disconnected(GHCMError):
    """The visibility graph has two or more components."""


class MapBudgetExceeded(GHCMError):
    """Initial-block search space exceeds the labeling budget."""


class DistinctnessViolated(GHCMError):
    """The observation matrix has indistinguishable columns for some row."""


class NotBernoulli(GHCMError):
    """An adversary was applied to a non-Bernoulli model."""


class MonotonicityViolated(GHCMError):
    """A corruption policy would flip an observation in the forbidden direction."""


class NotTwoCommunities(GHCMError):
    """A two-community routine was called with k != 2."""


class EmptyReference(GHCMError):
    """Propagation was asked to use a reference set with no labeled vertices."""
