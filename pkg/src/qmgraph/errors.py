"""Exception hierarchy.

Every error carries the process exit status the CLI reports for it:

====  ==========================================
code  meaning
====  ==========================================
0     success
1     runtime / numerical failure
2     configuration error
3     insufficient data
4     capacity exceeded (register too large)
====  ==========================================
"""


class QMGraphError(Exception):
    exit_code = 1


class ConfigError(QMGraphError, ValueError):
    exit_code = 2


class InsufficientDataError(QMGraphError):
    exit_code = 3


class CapacityError(QMGraphError):
    exit_code = 4


class DimensionError(QMGraphError, ValueError):
    pass


class DomainError(QMGraphError, ValueError):
    """A parameter lies outside its physical domain."""


class InvalidStateError(QMGraphError, ValueError):
    """Matrix violates the density-operator invariants."""


class NumericalIntegrityError(QMGraphError):
    pass


class PostselectionError(QMGraphError):
    """Projection left (numerically) nothing of the state."""


class GraphError(QMGraphError, ValueError):
    pass


class DiagnosticError(QMGraphError, ZeroDivisionError):
    """A diagnostic ratio is undefined for the given click probabilities."""


class FitError(QMGraphError):
    pass
