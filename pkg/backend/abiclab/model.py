"""Shared data model: the linear inverse problem, the prior, hyperparameters,
ground truth, validation and the problem-file format.

All containers are frozen and hold read-only float arrays, so they can be
shared between threads. Derived factorizations are cached on first use.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as la

from abiclab.errors import (
    DimensionError,
    DomainError,
    FactorizationError,
    ProblemFileError,
    RankDeficiencyWarning,
)

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
RANK_TOLERANCE_FACTOR = 1e3
KAPPA_RTOL = 1e-12

CholeskyFactor = Tuple[np.ndarray, bool]


# --- Linear algebra helpers ---
def _readonly(values: Any, ndim: int, name: str) -> np.ndarray:
    try:
        arr = np.array(values, dtype=np.float64, copy=True)
    except (TypeError, ValueError) as e:
        raise DimensionError(name, f"{ndim}-d real array", f"unparseable ({e})")
    if arr.ndim != ndim:
        raise DimensionError(name, f"{ndim}-d array", f"{arr.ndim}-d array of shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def is_symmetric(matrix: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    """Symmetry within rtol relative to the largest absolute entry."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    scale = np.max(np.abs(matrix)) if matrix.size else 0.0
    return bool(np.max(np.abs(matrix - matrix.T), initial=0.0) <= rtol * scale)


def cholesky_factor(matrix: np.ndarray, name: str) -> CholeskyFactor:
    """Lower Cholesky factor usable with ``scipy.linalg.cho_solve``.

    Positive definiteness is decided by whether this factorization succeeds.
    """
    try:
        return la.cho_factor(matrix, lower=True, check_finite=True)
    except (la.LinAlgError, ValueError) as e:
        raise FactorizationError(
            f"Cholesky factorization of {name} failed: {e}", {"matrix": name}
        )


def logdet_from_factor(factor: CholeskyFactor) -> float:
    return float(2.0 * np.sum(np.log(np.diag(factor[0]))))


def inverse_from_factor(factor: CholeskyFactor) -> np.ndarray:
    size = factor[0].shape[0]
    inv = la.cho_solve(factor, np.eye(size))
    return 0.5 * (inv + inv.T)


# --- Domain Types ---
@dataclass(frozen=True, eq=False)
class InverseProblem:
    """The linear model y = A·β + ε with cov(ε) = W⁻¹σ².

    ``y`` is optional so generators can hand out a design before observations
    are synthesized.
    """

    a_matrix: np.ndarray
    w: np.ndarray
    y: Optional[np.ndarray] = None

    @classmethod
    def create(cls, a_matrix, y=None, w=None) -> "InverseProblem":
        a = _readonly(a_matrix, 2, "A")
        n = a.shape[0]
        w_arr = _readonly(np.eye(n) if w is None else w, 2, "W")
        if w_arr.shape != (n, n):
            raise DimensionError("W", (n, n), w_arr.shape)
        y_arr = None
        if y is not None:
            y_arr = _readonly(y, 1, "y")
            if y_arr.shape != (n,):
                raise DimensionError("y", (n,), y_arr.shape)
        return cls(a_matrix=a, w=w_arr, y=y_arr)

    @property
    def n(self) -> int:
        return int(self.a_matrix.shape[0])

    @property
    def t(self) -> int:
        return int(self.a_matrix.shape[1])

    def with_observations(self, y) -> "InverseProblem":
        return InverseProblem.create(self.a_matrix, y=y, w=self.w)

    def require_y(self) -> np.ndarray:
        if self.y is None:
            raise DomainError("Inverse problem has no measurements y attached")
        return self.y

    @cached_property
    def w_factor(self) -> CholeskyFactor:
        return cholesky_factor(self.w, "W")

    @cached_property
    def w_logdet(self) -> float:
        return logdet_from_factor(self.w_factor)

    @cached_property
    def w_inverse(self) -> np.ndarray:
        return inverse_from_factor(self.w_factor)

    @cached_property
    def normal_matrix(self) -> np.ndarray:
        """N = AᵀWA, symmetrized."""
        n_mat = self.a_matrix.T @ self.w @ self.a_matrix
        return 0.5 * (n_mat + n_mat.T)

    def weighted_rhs(self, vector: np.ndarray) -> np.ndarray:
        """AᵀW·v for a measurement-space vector v."""
        return self.a_matrix.T @ (self.w @ vector)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"A": self.a_matrix.tolist(), "W": self.w.tolist()}
        if self.y is not None:
            data["y"] = self.y.tolist()
        return data


class MuMode(str, Enum):
    """Which prior mean a computation uses: the true one, or zero in its place."""

    TRUE = "true"
    ZERO = "zero"


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Prior moments E(β) = μ, D(β) = W_β⁻¹σ_β²."""

    mu: np.ndarray
    w_beta: np.ndarray
    sigma_beta2: Optional[float] = None
    mu_assumed_zero: bool = False

    @classmethod
    def create(cls, t: int, mu=None, w_beta=None, sigma_beta2: Optional[float] = None) -> "PriorModel":
        mu_assumed_zero = mu is None
        mu_arr = _readonly(np.zeros(t) if mu is None else mu, 1, "mu")
        if mu_arr.shape != (t,):
            raise DimensionError("mu", (t,), mu_arr.shape)
        wb = _readonly(np.eye(t) if w_beta is None else w_beta, 2, "W_beta")
        if wb.shape != (t, t):
            raise DimensionError("W_beta", (t, t), wb.shape)
        if sigma_beta2 is not None:
            sigma_beta2 = float(sigma_beta2)
        return cls(mu=mu_arr, w_beta=wb, sigma_beta2=sigma_beta2, mu_assumed_zero=mu_assumed_zero)

    @property
    def t(self) -> int:
        return int(self.mu.shape[0])

    @property
    def is_zero_mean(self) -> bool:
        return bool(not np.any(self.mu))

    def with_zero_mean(self) -> "PriorModel":
        """The same prior with μ forced to zero, flagged as assumed."""
        return PriorModel.create(self.t, mu=None, w_beta=self.w_beta, sigma_beta2=self.sigma_beta2)

    def with_mean(self, mu) -> "PriorModel":
        return PriorModel.create(self.t, mu=mu, w_beta=self.w_beta, sigma_beta2=self.sigma_beta2)

    @cached_property
    def w_beta_factor(self) -> CholeskyFactor:
        return cholesky_factor(self.w_beta, "W_beta")

    @cached_property
    def w_beta_logdet(self) -> float:
        return logdet_from_factor(self.w_beta_factor)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu": self.mu.tolist(),
            "W_beta": self.w_beta.tolist(),
            "sigma_beta2": self.sigma_beta2,
            "mu_assumed_zero": self.mu_assumed_zero,
        }


@dataclass(frozen=True)
class Hyperparameters:
    sigma2: float
    kappa: float
    sigma_beta2: Optional[float] = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.kappa > 0:
            raise DomainError(f"kappa must be positive, got {self.kappa}")
        if self.sigma_beta2 is not None:
            if not self.sigma_beta2 > 0:
                raise DomainError(f"sigma_beta2 must be positive, got {self.sigma_beta2}")
            implied = self.sigma2 / self.sigma_beta2
            if abs(implied - self.kappa) > KAPPA_RTOL * abs(self.kappa):
                raise DomainError(
                    f"kappa={self.kappa} inconsistent with sigma2/sigma_beta2={implied}"
                )

    @classmethod
    def from_variances(cls, sigma2: float, sigma_beta2: float) -> "Hyperparameters":
        if not sigma_beta2 > 0:
            raise DomainError(f"sigma_beta2 must be positive, got {sigma_beta2}")
        return cls(sigma2=float(sigma2), kappa=float(sigma2) / float(sigma_beta2),
                   sigma_beta2=float(sigma_beta2))

    def to_dict(self) -> Dict[str, Any]:
        return {"sigma2": self.sigma2, "kappa": self.kappa, "sigma_beta2": self.sigma_beta2}


@dataclass(frozen=True, eq=False)
class GroundTruth:
    beta_bar: np.ndarray
    y_bar: np.ndarray

    @classmethod
    def from_solution(cls, problem: InverseProblem, beta_bar) -> "GroundTruth":
        beta = _readonly(beta_bar, 1, "beta_bar")
        if beta.shape != (problem.t,):
            raise DimensionError("beta_bar", (problem.t,), beta.shape)
        y_bar = problem.a_matrix @ beta
        y_bar.setflags(write=False)
        return cls(beta_bar=beta, y_bar=y_bar)

    def epsilon(self, y: np.ndarray) -> np.ndarray:
        """Noise realization y − ȳ."""
        return np.asarray(y, dtype=np.float64) - self.y_bar

    def to_dict(self) -> Dict[str, Any]:
        return {"exact_solution": self.beta_bar.tolist(), "y_bar": self.y_bar.tolist()}


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: List[ValidationCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }


# --- Operations ---
def _check_shapes(problem: InverseProblem, prior: PriorModel) -> None:
    n, t = problem.n, problem.t
    if problem.w.shape != (n, n):
        raise DimensionError("W", (n, n), problem.w.shape)
    if problem.y is not None and problem.y.shape != (n,):
        raise DimensionError("y", (n,), problem.y.shape)
    if prior.mu.shape != (t,):
        raise DimensionError("mu", (t,), prior.mu.shape)
    if prior.w_beta.shape != (t, t):
        raise DimensionError("W_beta", (t, t), prior.w_beta.shape)


def _pd_check(matrix: np.ndarray, name: str) -> ValidationCheck:
    try:
        cholesky_factor(matrix, name)
        return ValidationCheck(f"{name}_positive_definite", True, "Cholesky factorization succeeded")
    except FactorizationError as e:
        return ValidationCheck(f"{name}_positive_definite", False, e.message)


def _symmetry_check(matrix: np.ndarray, name: str) -> ValidationCheck:
    asym = float(np.max(np.abs(matrix - matrix.T), initial=0.0))
    return ValidationCheck(
        f"{name}_symmetric",
        is_symmetric(matrix),
        f"max|M-M^T| = {asym:.3e} (tolerance {SYMMETRY_RTOL:g} x max|M|)",
    )


def validate_problem(problem: InverseProblem, prior: PriorModel,
                     hyper: Optional[Hyperparameters] = None) -> ValidationReport:
    """Check every invariant of the problem/prior pair and report each one.

    Shape mismatches are not reported but raised as DimensionError, since no
    other check is meaningful without consistent shapes.
    """
    _check_shapes(problem, prior)
    n, t = problem.n, problem.t
    checks = [ValidationCheck("n_ge_t", n >= t >= 1, f"n={n}, t={t}")]

    sv = la.svdvals(problem.a_matrix)
    smallest = float(sv[-1]) if n >= t else 0.0
    deficient = _rank_deficient(sv) if n >= t else True
    checks.append(ValidationCheck(
        "a_full_column_rank",
        n >= t and smallest > 0.0,
        f"smallest singular value {smallest:.3e}, largest {float(sv[0]):.3e}"
        + ("; numerically rank deficient" if deficient else ""),
    ))

    for matrix, name in ((problem.w, "W"), (prior.w_beta, "W_beta")):
        checks.append(_symmetry_check(matrix, name))
        checks.append(_pd_check(matrix, name))

    if prior.sigma_beta2 is not None:
        checks.append(ValidationCheck(
            "sigma_beta2_positive", prior.sigma_beta2 > 0, f"sigma_beta2={prior.sigma_beta2}"
        ))
    if hyper is not None and hyper.sigma_beta2 is not None:
        implied = hyper.sigma2 / hyper.sigma_beta2
        checks.append(ValidationCheck(
            "kappa_consistent",
            abs(implied - hyper.kappa) <= KAPPA_RTOL * hyper.kappa,
            f"kappa={hyper.kappa}, sigma2/sigma_beta2={implied}",
        ))

    report = ValidationReport(checks=checks)
    if not report.passed:
        logger.warning(f"⚠️ Validation failed: {', '.join(report.failed())}")
    return report


def _rank_deficient(sv: np.ndarray) -> bool:
    eps = np.finfo(np.float64).eps
    return bool(sv[-1] <= RANK_TOLERANCE_FACTOR * eps * sv[0])


def is_rank_deficient(problem: InverseProblem) -> bool:
    return _rank_deficient(la.svdvals(problem.a_matrix))


def condition_estimate(problem: InverseProblem) -> float:
    """2-norm condition number σ_max/σ_min of A.

    Numerically rank-deficient A is flagged with a RankDeficiencyWarning and
    the computed ratio (possibly inf) is still returned.
    """
    sv = la.svdvals(problem.a_matrix)
    smallest = float(sv[min(problem.n, problem.t) - 1])
    cond = float(sv[0] / smallest) if smallest > 0.0 else float("inf")
    if _rank_deficient(sv):
        logger.warning(f"⚠️ A is numerically rank deficient (condition {cond:.3e})")
        warnings.warn(f"A is numerically rank deficient (condition {cond:.3e})",
                      RankDeficiencyWarning, stacklevel=2)
    return cond


# --- Problem file ---
@dataclass(frozen=True, eq=False)
class ProblemFile:
    problem: InverseProblem
    prior: PriorModel
    sigma2: Optional[float] = None

    @property
    def mu_assumed_zero(self) -> bool:
        return self.prior.mu_assumed_zero

    def to_dict(self) -> Dict[str, Any]:
        data = {"A": self.problem.a_matrix.tolist()}
        if self.problem.y is not None:
            data["y"] = self.problem.y.tolist()
        data["W"] = self.problem.w.tolist()
        data["W_beta"] = self.prior.w_beta.tolist()
        if not self.prior.mu_assumed_zero:
            data["mu"] = self.prior.mu.tolist()
        if self.sigma2 is not None:
            data["sigma2"] = self.sigma2
        if self.prior.sigma_beta2 is not None:
            data["sigma_beta2"] = self.prior.sigma_beta2
        data["mu_assumed_zero"] = self.prior.mu_assumed_zero
        return data


def problem_from_dict(data: Dict[str, Any]) -> ProblemFile:
    if "A" not in data:
        raise ProblemFileError("Problem file is missing required key 'A'")
    problem = InverseProblem.create(data["A"], y=data.get("y"), w=data.get("W"))
    prior = PriorModel.create(
        problem.t, mu=data.get("mu"), w_beta=data.get("W_beta"), sigma_beta2=data.get("sigma_beta2")
    )
    sigma2 = data.get("sigma2")
    return ProblemFile(problem=problem, prior=prior, sigma2=None if sigma2 is None else float(sigma2))


def load_problem_file(path) -> ProblemFile:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ProblemFileError(f"Could not read problem file {path}: {e}", {"path": str(path)})
    if not isinstance(data, dict):
        raise ProblemFileError(f"Problem file {path} must hold a JSON object", {"path": str(path)})
    problem_file = problem_from_dict(data)
    if problem_file.mu_assumed_zero:
        logger.info(f"ℹ️ {Path(path).name} has no 'mu'; prior mean assumed zero")
    return problem_file
