"""Exception hierarchy.

Every numerical failure raised by the package derives from
:class:`KdvStabError`, which the command-line driver maps to exit code 2.
"""


class KdvStabError(Exception):
    """Base class for numerical failures."""


class DegenerateRoots(KdvStabError):
    """The characteristic cubic has a (near) repeated root."""


class BracketFailure(KdvStabError):
    """A predicted eigenvalue bracket holds no certified dispersion zero."""


class SpectrumError(KdvStabError):
    """The located spectrum violates a structural check (e.g. gap growth)."""


class ZeroNorm(KdvStabError):
    """A candidate eigenfunction has vanishing L2 norm."""


class GridTooCoarse(KdvStabError):
    pass


class ConvergenceFailure(KdvStabError):
    pass


class NotPositiveDefinite(KdvStabError):
    """The Gramian failed its Hermitian positive-definite factorization."""


class SingularGramian(KdvStabError):
    pass


class UnstableIntegration(KdvStabError):
    """Simulated norm grew past the blow-up guard."""


class DegenerateFit(KdvStabError):
    pass


class DegenerateObservability(KdvStabError):
    """Observability constant collapsed at a non-critical length."""


class EmptyInput(KdvStabError):
    pass


class CriticalLength(KdvStabError):
    """Requested length lies in the critical set."""
