"""Exception hierarchy.

Two branches matter for the CLI exit-code contract: ``InputError`` maps to
exit code 2 (bad files, bad configuration, bad panel data), everything else
under ``EstimationError`` maps to exit code 1.
"""


class IscmError(Exception):
    """Base class for all package errors."""


class InputError(IscmError):
    """User-supplied input (file, configuration, panel) is invalid."""


class ConfigError(InputError):
    """Run-configuration file failed to parse or resolve."""


class MissingCell(InputError):
    """A (unit, period) combination has no observation."""


class DuplicateRow(InputError):
    """A (unit, period) combination appears more than once."""


class NonNumericValue(InputError):
    """An outcome or predictor cell could not be read as a number."""


class TooFewPrePeriods(InputError):
    """The intervention time leaves too few pre-intervention periods."""


class UnknownUnit(InputError):
    """A referenced unit id is not present in the panel."""


class InvalidConfig(InputError):
    """A simulation configuration violates its invariants."""


class EstimationError(IscmError):
    """Estimation failed after inputs were accepted."""


class DimensionMismatch(EstimationError):
    """Matrix/vector shapes are inconsistent."""


class SolverDiverged(EstimationError):
    """The weight solver hit its iteration cap without meeting tolerance."""


class EmptyPeriodSet(EstimationError):
    """An RMSPE was requested over an empty period set."""


class DonorPoolMismatch(EstimationError):
    """A fit's donor pool lacks a unit required by the system assembly."""


class NotSquare(EstimationError):
    """A square matrix was expected."""


class SingularSystem(EstimationError):
    """The cross-weight system matrix is singular (or treated as such)."""


class PredictorMismatch(EstimationError):
    """Two fits being compared do not share target or predictor set."""


class ZeroPreRmspe(EstimationError):
    """A placebo ratio is undefined because the pre-period RMSPE is zero."""


class TruthUnavailable(EstimationError):
    """A bias ledger was requested without known true effects."""


class ConsistencyError(EstimationError):
    """An internal cross-check (e.g. two solution routes) disagreed."""


class IllConditionedWarning(UserWarning):
    """The system matrix is invertible but numerically fragile."""


class WeightMagnitudeWarning(UserWarning):
    """An estimated weight has magnitude above one."""
