"""Exception hierarchy shared across the package.

Two failure families matter to callers: refusals (a precondition cannot be
certified, nothing was computed) and certificate failures (a computation ran
but its claimed inequality does not hold).  The CLI maps them to distinct
exit codes.
"""


class WeylLabError(Exception):
    """Base class for all package errors."""


class RefusalError(WeylLabError):
    """A precondition could not be certified; the operation was refused."""

    exit_code = 2


class TruncationError(RefusalError):
    """No finite frequency window can be certified for the requested task."""


class VolumeLeakError(RefusalError):
    """The target region touches the declared frequency truncation."""


class UnresolvedError(RefusalError):
    """The requested spectral window is not resolved by the discretization."""


class ClusterSplitError(RefusalError):
    """A threshold would split a singular-value cluster."""


class ScheduleError(RefusalError):
    """Parameter schedule constraints are infeasible; carries the report."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CertificateError(WeylLabError):
    """A computed certificate inequality failed."""

    exit_code = 3


class InternalConsistencyError(WeylLabError):
    """Two quantities that must agree exactly on the same grid disagreed."""
