"""Exception types raised across the package."""


class BayesCapError(Exception):
    """Base class for package errors."""


class ValidationError(BayesCapError, ValueError):
    """Input failed a shape, symmetry or schema check."""


class DomainError(BayesCapError, ValueError):
    """A matrix function was applied outside its domain (e.g. log of a non-PD matrix)."""


class DegenerateInputError(BayesCapError, ValueError):
    """Input is rank deficient or has zero variance where that is not allowed."""


class NumericError(BayesCapError, FloatingPointError):
    """A computation produced a non-finite value."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class InitializationError(BayesCapError, RuntimeError):
    pass


class DivergenceError(BayesCapError, RuntimeError):
    """Too many divergent HMC transitions after warmup."""


class ParseError(BayesCapError, ValueError):
    """Malformed input file; message carries file and line."""


class CandidateFitError(BayesCapError, RuntimeError):
    """A fit inside a component-count sweep failed; ``d`` is the candidate."""

    def __init__(self, message, d=None):
        super().__init__(message)
        self.d = d
