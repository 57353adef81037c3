"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class ConfigError(ValueError):
    """An NMF or benchmark configuration is inconsistent."""


class CollectiveMismatch(RuntimeError):
    """Ranks of one group issued different collectives at the same call tag."""

    def __init__(self, message, rank=None, tag=None):
        super().__init__(message)
        self.rank = rank
        self.tag = tag


class DeadlockError(RuntimeError):
    """No rank of the virtual cluster can make progress."""

    def __init__(self, message, rank=None, tag=None):
        super().__init__(message)
        self.rank = rank
        self.tag = tag


class ClusterAborted(RuntimeError):
    """Raised inside a rank when another rank failed first."""


class BppConvergenceError(RuntimeError):
    """Block principal pivoting hit its exchange cap before satisfying KKT."""

    def __init__(self, message, kkt_residual):
        super().__init__(message)
        self.kkt_residual = kkt_residual


class SingularSubsystemError(RuntimeError):
    """A passive-set normal-equations block stayed singular after regularization."""


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
