"""Exception hierarchy.

Two families matter to callers: ValidationError for malformed input or an
infeasible design (CLI exit code 1), and EstimationError for failures inside
an estimation or variance computation on valid input (CLI exit code 2).
"""

from __future__ import annotations


class StrataBoundsError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StrataBoundsError):
    """Input data or design cannot be used at all."""


class ParseError(ValidationError):
    """A CSV file is malformed; the message names the offending row."""


class DesignError(ValidationError):
    """Block structure violates a design precondition."""


class EstimationError(StrataBoundsError):
    """An estimator or variance step failed on otherwise valid input."""


class UndefinedTrimmingError(EstimationError):
    """The trimming share cannot be formed (an arm has no observed units)."""


class DegenerateTrimError(EstimationError):
    """Trimming would retain less than one unit of mass."""


class SingularJacobianError(EstimationError):
    """The moment Jacobian is numerically singular."""


class PairingError(EstimationError):
    """Singleton-arm blocks cannot be paired for the design variance."""


class FeasibilityError(EstimationError):
    """A variance method's precondition fails (e.g. arms below two units)."""


class InternalConsistencyError(EstimationError):
    """A fitted parameter vector fails its own moment-residual checks."""
