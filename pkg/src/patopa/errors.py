"""Exception types raised by the estimation pipeline.

Each class carries an ``exit_code`` and ``category`` so the command line
front-end can map failures onto distinct, machine-readable exit statuses.
"""


class PatopaError(Exception):
    exit_code = 1
    category = "error"


class InvalidArgumentError(PatopaError, ValueError):
    exit_code = 2
    category = "invalid-argument"


class ParseError(PatopaError, ValueError):
    exit_code = 3
    category = "parse-error"


class InsufficientDataError(PatopaError):
    exit_code = 4
    category = "insufficient-data"

    def __init__(self, message, required_samples=None):
        super().__init__(message)
        self.required_samples = required_samples


class NongenericTLSError(PatopaError):
    exit_code = 5
    category = "nongeneric-tls"


class IterationFailureError(PatopaError):
    exit_code = 6
    category = "iteration-failure"

    def __init__(self, message, iteration=None, probe=None):
        super().__init__(message)
        self.iteration = iteration
        self.probe = probe


class CannotNormalizeError(IterationFailureError):
    category = "cannot-normalize"


class SingularSystemError(PatopaError):
    exit_code = 7
    category = "singular-system"

    def __init__(self, message, deficient_dimension=None):
        super().__init__(message)
        self.deficient_dimension = deficient_dimension
