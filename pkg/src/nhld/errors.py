"""Exception hierarchy shared by the library and the CLI.

Each class carries a short machine-parsable ``code`` that the CLI prints as a
prefix and maps onto its exit status.
"""


class NHLDError(Exception):
    code = "error"
    exit_status = 1


class InvalidSpec(NHLDError):
    code = "invalid-spec"


class NotStochastic(InvalidSpec):
    code = "not-stochastic"


class NotIrreducible(NHLDError):
    code = "not-irreducible"


class OutOfRange(NHLDError):
    code = "out-of-range"


class UnsupportedDimension(NHLDError):
    code = "unsupported-dimension"


class NotConverged(NHLDError):
    code = "not-converged"
    exit_status = 2

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BudgetExceeded(NHLDError):
    code = "budget-exceeded"
    exit_status = 3

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required
