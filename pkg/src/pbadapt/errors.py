"""Exception types shared across the package."""


class PbAdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(PbAdaptError):
    """Invalid or incomplete run configuration."""


class ParseError(PbAdaptError):
    """Malformed input file; carries path and 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class MeshInvariantError(PbAdaptError):
    """Mesh violates a structural invariant (manifoldness, orientation, degeneracy)."""


class SingularityError(PbAdaptError):
    """Kernel evaluated at (numerically) coincident points."""


class DomainError(PbAdaptError):
    """A point lies on the wrong side of the interface for the requested operation."""


class UsageError(PbAdaptError):
    """Operation invoked outside its contract (bad target, missing genealogy, ...)."""


class SolverError(PbAdaptError):
    """Iterative solve failed; carries the best residual reached."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SeriesConvergenceError(PbAdaptError):
    """Analytic series did not converge within the term budget."""

    def __init__(self, message, tail_estimate=None):
        super().__init__(message)
        self.tail_estimate = tail_estimate


class ExtrapolationError(PbAdaptError):
    """Extrapolation undefined for the supplied sequence."""


class EffectivityUndefinedError(PbAdaptError):
    """Effectivity ratio undefined: the reference error is zero."""


class LoopAbortedError(PbAdaptError):
    """Refinement loop aborted mid-run; carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history
