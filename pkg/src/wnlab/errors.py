"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numerical failures -> 3.
"""


class WnlabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WnlabError):
    """Bad user-supplied configuration (dimension mismatch, invalid field)."""


class DataFormatError(WnlabError):
    """Malformed input file (CSV, binary matrix, trajectory dump, JSON spec)."""


class DegenerateInstanceError(WnlabError):
    """Problem data too degenerate to work with (e.g. all-zero matrix)."""


class SingularStateError(WnlabError):
    """State outside the chart of the parameterization (e.g. u = 0)."""


class DomainError(WnlabError):
    """Value outside the mathematical domain of a formula (logs/negative powers)."""


class InvariantOverflowError(WnlabError):
    """Exponential factor left float range; use the log-space code path."""


class PreconditionError(WnlabError):
    """A closed-form bound was requested outside its hypotheses."""

    def __init__(self, message: str, inequality: str = ""):
        super().__init__(message)
        self.inequality = inequality


class NotApplicableError(WnlabError):
    """Requested diagnostic does not apply to this run (wrong variant, no window)."""


class StallError(WnlabError):
    """Line search could not find any acceptable step above its floor."""


class DivergedError(WnlabError):
    """Trajectory produced non-finite values."""


class SolverFailureError(WnlabError):
    """LP solver hit its cycling/iteration guard; result unusable."""
