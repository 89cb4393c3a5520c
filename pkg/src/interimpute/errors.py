"""Exception types raised across the package."""


class InterimputeError(Exception):
    """Base class for all errors raised by this package."""


class FormulaError(InterimputeError):
    """Malformed model formula (unknown variable, duplicate term, ...)."""


class IncompleteRowError(InterimputeError):
    """A row selected for a model fit has a masked cell among its terms."""


class EmptyCompleteCaseError(InterimputeError):
    """No fully observed rows are available."""


class SingularDesignError(InterimputeError):
    """Design matrix is rank deficient (or the information matrix cannot be
    factorised even after jitter)."""


class DegenerateOutcomeError(InterimputeError):
    """Binary outcome vector is constant, so no logistic fit exists."""


class ConvergenceError(InterimputeError):
    """Operation requires a converged fit and did not get one."""


class NoDonorsError(InterimputeError):
    """A partially observed variable has no observed values to draw from."""


class StratumError(InterimputeError):
    """A stratum is too small or degenerate for within-stratum imputation."""


class StrategyError(InterimputeError):
    """An imputation strategy failed; message carries (dataset, iteration)
    context."""


class CsvFormatError(InterimputeError):
    """Malformed CSV input (header mismatch, bad cell, ragged row)."""


class ConfigError(InterimputeError):
    """Invalid run configuration (unknown key, bad type, bad value)."""


class CalibrationError(InterimputeError):
    """Bisection for the missingness intercept failed to bracket the target."""


class TableGapError(InterimputeError):
    """The replicate results are missing a (dgm, method, term) cell."""
