"""Exception hierarchy shared by the library and the CLI.

Every error knows its machine-readable code and the process exit status the
CLI reports for it.
"""

from typing import Any, Dict, Optional


class AbicLabError(Exception):
    error_code = "abiclab_error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": "error",
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
        }


class ConfigError(AbicLabError):
    error_code = "config_error"
    exit_code = 2


class ProblemFileError(AbicLabError):
    error_code = "io_error"
    exit_code = 4


class NumericError(AbicLabError):
    error_code = "numeric_error"
    exit_code = 3


class DimensionError(NumericError, ValueError):
    error_code = "dimension_mismatch"

    def __init__(self, field: str, expected: Any, actual: Any):
        super().__init__(
            f"Shape mismatch in '{field}': expected {expected}, got {actual}",
            {"field": field, "expected": str(expected), "actual": str(actual)},
        )
        self.field = field


class DomainError(NumericError, ValueError):
    error_code = "domain_error"


class FactorizationError(NumericError):
    error_code = "factorization_failed"


class SingularMatrixError(NumericError):
    error_code = "singular_normal_matrix"

    def __init__(self, message: str, condition: float):
        super().__init__(message, {"condition": condition})
        self.condition = condition


class DegenerateInputError(NumericError, ValueError):
    error_code = "degenerate_input"


class EvaluationError(NumericError):
    error_code = "objective_evaluation_failed"


class RankDeficiencyWarning(UserWarning):
    """A has numerically deficient column rank; regularized paths continue."""
