"""
Error hierarchy for the travel demand pipeline.
Every error carries the process exit code the CLI should return.
"""

from typing import Any, Dict, List, Optional


class TravelDemandError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.details}


# =========================
# CONFIG ERRORS (exit 2)
# =========================
class ConfigError(TravelDemandError):
    """Invalid or incomplete configuration"""

    exit_code = 2


# =========================
# DATA ERRORS (exit 3)
# =========================
class DataError(TravelDemandError):
    """Input data violates a schema or domain invariant"""

    exit_code = 3


class IllFormedChainError(DataError):
    """Activity chain has a gap, an overlap or does not cover the day"""


class MaskedPersonError(DataError):
    """A PAD code appeared where a real person row was expected"""


class InfeasibleMarginalError(DataError):
    """A marginal category has a positive target but no seed support"""


class SchemaError(DataError):
    """File columns do not match the documented header schema"""


class InvariantViolationError(DataError):
    """Records violate a domain invariant"""

    def __init__(self, message: str, rows: Optional[List[int]] = None, **details: Any):
        super().__init__(message, rows=rows or [], **details)
        self.rows = rows or []


class ReferentialError(DataError):
    """A record references an unknown entity (zone, household, link)"""


class ArityError(DataError):
    """Number of chains does not match the household size"""


class CompatibilityError(DataError):
    """No land-use compatible zone exists for an activity"""


class UnroutableTripError(DataError):
    """Origin and destination are disconnected in the road network"""


class UndefinedMetricError(DataError):
    """Metric has no defined value for the given inputs"""


class NormalizationError(DataError):
    """Distribution does not sum to one or has negative mass"""


class DegenerateMaskError(DataError):
    """Every person of a household is masked"""


class CheckpointMismatchError(DataError):
    """Checkpoint was produced for a different corpus schema"""


# =========================
# NUMERIC FAULTS (exit 4)
# =========================
class NumericFaultError(TravelDemandError):
    """Non-finite value produced inside a computation"""

    exit_code = 4

    def __init__(self, message: str, layer: str = "", **details: Any):
        super().__init__(message, layer=layer, **details)
        self.layer = layer


class GridlockError(NumericFaultError):
    """Queue simulation stopped making progress"""

    def __init__(self, message: str, blocked_links: Optional[List[Any]] = None, time_s: int = 0):
        super().__init__(message, layer="queue_engine", blocked_links=blocked_links or [], time_s=time_s)
        self.blocked_links = blocked_links or []
        self.time_s = time_s


class StageFailure(TravelDemandError):
    """A pipeline stage failed; wraps the underlying error"""

    def __init__(self, stage: str, cause: Exception, last_good_artifact: Optional[str] = None):
        super().__init__(
            f"Stage '{stage}' failed: {cause}",
            stage=stage,
            last_good_artifact=last_good_artifact,
        )
        self.stage = stage
        self.cause = cause
        self.last_good_artifact = last_good_artifact
        self.exit_code = getattr(cause, "exit_code", 1)
