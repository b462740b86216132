"""Marginal distribution of the measurements and the ABIC objectives.

The marginal of y is N(Aμ, Σ_py) with Σ_py = W⁻¹σ² + AW_β⁻¹Aᵀσ_β². Writing
κ = σ²/σ_β² gives Σ_py = σ²·E_py, E_py = W⁻¹ + AW_β⁻¹Aᵀ/κ. Every objective is
built from two numbers at a given κ:

    quad_term   = (y − Aμ)ᵀ E_py⁻¹ (y − Aμ)
    logdet_term = ln det E_py

Small problems factor E_py directly. Larger ones use the t×t matrix
M = W_β + AᵀWA/κ:

    quad_term   = rᵀWr − bᵀM⁻¹b/κ,  b = AᵀWr
    logdet_term = −ln det W + ln det M − ln det W_β

Objectives leave out the constant n·ln(2π).
"""

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la

from abiclab.errors import DegenerateInputError, DomainError, ProblemFileError
from abiclab.estimators import bayes_estimate, posterior_precision
from abiclab.model import (
    CholeskyFactor,
    InverseProblem,
    PriorModel,
    cholesky_factor,
    logdet_from_factor,
)

logger = logging.getLogger(__name__)

DIRECT_PATH_MAX_N = 64
LOG_2PI = float(np.log(2.0 * np.pi))
SWEEP_HEADER = ["kappa", "quad_term", "logdet_term", "objective", "case"]


class ComputationPath(str, Enum):
    AUTO = "auto"
    DIRECT = "direct"
    WOODBURY = "woodbury"


class CaseTag(str, Enum):
    CASE1 = "Case1"
    CASE1_ZERO_MEAN = "Case1ZeroMean"
    CASE2 = "Case2"
    CASE2_ZERO_MEAN = "Case2ZeroMean"

    @classmethod
    def for_case(cls, case: int, zero_mean: bool) -> "CaseTag":
        if case == 1:
            return cls.CASE1_ZERO_MEAN if zero_mean else cls.CASE1
        if case == 2:
            return cls.CASE2_ZERO_MEAN if zero_mean else cls.CASE2
        raise DomainError(f"case must be 1 or 2, got {case}")

    @property
    def case(self) -> int:
        return 1 if self in (CaseTag.CASE1, CaseTag.CASE1_ZERO_MEAN) else 2


def _check_kappa(kappa: float) -> None:
    if not kappa > 0:
        raise DomainError(f"kappa must be positive, got {kappa}")


def _check_sigma2(sigma2: float) -> None:
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True, eq=False)
class MarginalOperators:
    """E_py at one κ together with its factorization."""

    kappa: float
    e_py: np.ndarray
    logdet_e_py: float
    factor: CholeskyFactor

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return la.cho_solve(self.factor, rhs)

    def quad_form(self, residual: np.ndarray) -> float:
        return float(residual @ self.solve(residual))

    def sigma_py(self, sigma2: float) -> np.ndarray:
        """σ²·E_py, which is Σ_py when σ_β² = σ²/κ."""
        _check_sigma2(sigma2)
        return sigma2 * self.e_py


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    quad_term: float
    logdet_term: float
    kappa: float
    case_tag: CaseTag

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "quad_term": self.quad_term,
            "logdet_term": self.logdet_term,
            "kappa": self.kappa,
            "case": self.case_tag.value,
        }


class MarginalEvaluator:
    """Evaluates quad_term and logdet_term of one (problem, prior) pair at any κ.

    Quantities that do not depend on κ (AᵀWA, W⁻¹, AW_β⁻¹Aᵀ and the
    factorizations of W and W_β) are computed once.
    """

    def __init__(self, problem: InverseProblem, prior: PriorModel,
                 path: Union[ComputationPath, str] = ComputationPath.AUTO):
        if prior.t != problem.t:
            raise DomainError(f"prior has t={prior.t} but A has {problem.t} columns")
        self.problem = problem
        self.prior = prior
        path = ComputationPath(path)
        if path is ComputationPath.AUTO:
            path = ComputationPath.DIRECT if problem.n <= DIRECT_PATH_MAX_N else ComputationPath.WOODBURY
        self.path = path
        logger.debug(f"Marginal evaluator n={problem.n} t={problem.t} path={path.value}")

    @cached_property
    def residual(self) -> np.ndarray:
        """y − Aμ."""
        return self.problem.require_y() - self.problem.a_matrix @ self.prior.mu

    @cached_property
    def prior_image(self) -> np.ndarray:
        """AW_β⁻¹Aᵀ."""
        a = self.problem.a_matrix
        return _symmetrize(a @ la.cho_solve(self.prior.w_beta_factor, a.T))

    @cached_property
    def _wa(self) -> np.ndarray:
        return self.problem.w @ self.problem.a_matrix

    def e_py(self, kappa: float) -> np.ndarray:
        _check_kappa(kappa)
        return _symmetrize(self.problem.w_inverse + self.prior_image / kappa)

    def _direct_factor(self, kappa: float) -> CholeskyFactor:
        return cholesky_factor(self.e_py(kappa), "E_py")

    def _reduced_factor(self, kappa: float) -> CholeskyFactor:
        _check_kappa(kappa)
        reduced = _symmetrize(self.prior.w_beta + self.problem.normal_matrix / kappa)
        return cholesky_factor(reduced, "W_beta + A^T W A / kappa")

    def _reduced_logdet(self, factor: CholeskyFactor) -> float:
        return -self.problem.w_logdet + logdet_from_factor(factor) - self.prior.w_beta_logdet

    def quad_forms(self, residuals: np.ndarray, kappa: float) -> np.ndarray:
        """rᵀE_py⁻¹r for every row r of ``residuals``."""
        residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
        if self.path is ComputationPath.DIRECT:
            solved = la.cho_solve(self._direct_factor(kappa), residuals.T)
            return np.einsum("ij,ji->i", residuals, solved)
        factor = self._reduced_factor(kappa)
        weighted = residuals @ self.problem.w
        projected = residuals @ self._wa
        correction = np.einsum("ij,ji->i", projected, la.cho_solve(factor, projected.T))
        return np.einsum("ij,ij->i", weighted, residuals) - correction / kappa

    def logdet(self, kappa: float) -> float:
        if self.path is ComputationPath.DIRECT:
            return logdet_from_factor(self._direct_factor(kappa))
        return self._reduced_logdet(self._reduced_factor(kappa))

    def terms(self, kappa: float, residual: Optional[np.ndarray] = None) -> Tuple[float, float]:
        """(quad_term, logdet_term) from a single factorization."""
        r = self.residual if residual is None else np.asarray(residual, dtype=np.float64)
        if self.path is ComputationPath.DIRECT:
            factor = self._direct_factor(kappa)
            quad = float(r @ la.cho_solve(factor, r))
            return quad, logdet_from_factor(factor)
        factor = self._reduced_factor(kappa)
        b = self._wa.T @ r
        quad = float(r @ self.problem.w @ r - b @ la.cho_solve(factor, b) / kappa)
        return quad, self._reduced_logdet(factor)

    def trace_e_inv_w_inv(self, kappa: float) -> float:
        """tr(E_py⁻¹W⁻¹), at most n."""
        if self.path is ComputationPath.DIRECT:
            return float(np.trace(la.cho_solve(self._direct_factor(kappa), self.problem.w_inverse)))
        factor = self._reduced_factor(kappa)
        return float(self.problem.n - np.trace(la.cho_solve(factor, self.problem.normal_matrix)) / kappa)

    def case1(self, kappa: float, residual: Optional[np.ndarray] = None) -> ObjectiveValue:
        quad, logdet = self.terms(kappa, residual)
        if not quad > 0:
            raise DegenerateInputError(
                "Quadratic form is zero (y = Aμ); Case-1 objective is undefined",
                {"kappa": kappa, "quad_term": quad},
            )
        n = self.problem.n
        return ObjectiveValue(
            total=n * float(np.log(quad)) + logdet,
            quad_term=quad,
            logdet_term=logdet,
            kappa=float(kappa),
            case_tag=CaseTag.for_case(1, self.prior.is_zero_mean),
        )

    def case2(self, sigma2: float, kappa: float, residual: Optional[np.ndarray] = None) -> ObjectiveValue:
        _check_sigma2(sigma2)
        quad, logdet = self.terms(kappa, residual)
        return ObjectiveValue(
            total=quad / sigma2 + logdet,
            quad_term=quad,
            logdet_term=logdet,
            kappa=float(kappa),
            case_tag=CaseTag.for_case(2, self.prior.is_zero_mean),
        )

    def objective(self, case: int, kappa: float, sigma2: Optional[float] = None) -> ObjectiveValue:
        if case == 1:
            return self.case1(kappa)
        if sigma2 is None:
            raise DomainError("Case 2 needs a known sigma2")
        return self.case2(sigma2, kappa)

    def operators(self, kappa: float) -> MarginalOperators:
        e_py = self.e_py(kappa)
        factor = cholesky_factor(e_py, "E_py")
        e_py.setflags(write=False)
        return MarginalOperators(
            kappa=float(kappa), e_py=e_py, logdet_e_py=logdet_from_factor(factor), factor=factor
        )


def _as_prior(problem: InverseProblem, w_beta_or_prior) -> PriorModel:
    if isinstance(w_beta_or_prior, PriorModel):
        return w_beta_or_prior
    return PriorModel.create(problem.t, w_beta=w_beta_or_prior)


# --- Σ_py and E_py ---
def build_sigma_py(problem: InverseProblem, prior: PriorModel, sigma2: float,
                   sigma_beta2: float) -> np.ndarray:
    """W⁻¹σ² + AW_β⁻¹Aᵀσ_β², checked to be positive definite."""
    _check_sigma2(sigma2)
    if sigma_beta2 < 0:
        raise DomainError(f"sigma_beta2 must be non-negative, got {sigma_beta2}")
    evaluator = MarginalEvaluator(problem, prior)
    sigma_py = sigma2 * problem.w_inverse
    if sigma_beta2 > 0:
        sigma_py = _symmetrize(sigma_py + sigma_beta2 * evaluator.prior_image)
    cholesky_factor(sigma_py, "Sigma_py")
    return sigma_py


def build_e_py(problem: InverseProblem, w_beta, kappa: float) -> MarginalOperators:
    """E_py = W⁻¹ + AW_β⁻¹Aᵀ/κ; ``w_beta`` may be a matrix or a PriorModel."""
    _check_kappa(kappa)
    return MarginalEvaluator(problem, _as_prior(problem, w_beta)).operators(kappa)


def logdet_e_py(problem: InverseProblem, w_beta, kappa: float,
                path: Union[ComputationPath, str] = ComputationPath.AUTO) -> float:
    return MarginalEvaluator(problem, _as_prior(problem, w_beta), path).logdet(kappa)


# --- Likelihoods ---
def neg_log_lik_variances(problem: InverseProblem, prior: PriorModel, sigma2: float,
                          sigma_beta2: float) -> float:
    """ln det Σ_py + (y − Aμ)ᵀΣ_py⁻¹(y − Aμ)."""
    _check_sigma2(sigma2)
    if not sigma_beta2 > 0:
        raise DomainError(f"sigma_beta2 must be positive, got {sigma_beta2}")
    evaluator = MarginalEvaluator(problem, prior)
    r = evaluator.residual
    if evaluator.path is ComputationPath.DIRECT:
        factor = cholesky_factor(build_sigma_py(problem, prior, sigma2, sigma_beta2), "Sigma_py")
        return logdet_from_factor(factor) + float(r @ la.cho_solve(factor, r))
    quad, logdet = evaluator.terms(sigma2 / sigma_beta2)
    return problem.n * float(np.log(sigma2)) + logdet + quad / sigma2


def neg_log_lik_kappa(problem: InverseProblem, prior: PriorModel, sigma2: float,
                      kappa: float) -> float:
    """n ln σ² + ln det E_py + (y − Aμ)ᵀE_py⁻¹(y − Aμ)/σ²."""
    _check_sigma2(sigma2)
    quad, logdet = MarginalEvaluator(problem, prior).terms(kappa)
    return problem.n * float(np.log(sigma2)) + logdet + quad / sigma2


def log_marginal_density(problem: InverseProblem, prior: PriorModel, sigma2: float,
                         sigma_beta2: float) -> float:
    """ln m(y | σ², σ_β²), normalizing constant included."""
    nll = neg_log_lik_variances(problem, prior, sigma2, sigma_beta2)
    return -0.5 * problem.n * LOG_2PI - 0.5 * nll


def sigma2_hat(problem: InverseProblem, prior: PriorModel, kappa: float) -> float:
    """(y − Aμ)ᵀE_py⁻¹(y − Aμ)/n; with μ = 0 this is the zero-mean estimate."""
    quad, _ = MarginalEvaluator(problem, prior).terms(kappa)
    return quad / problem.n


def split_terms(problem: InverseProblem, prior: PriorModel, kappa: float) -> Tuple[float, float]:
    return MarginalEvaluator(problem, prior).terms(kappa)


def abic_case1(problem: InverseProblem, prior: PriorModel, kappa: float) -> ObjectiveValue:
    """n·ln(quad_term) + logdet_term, for both variances unknown."""
    return MarginalEvaluator(problem, prior).case1(kappa)


def abic_case2(problem: InverseProblem, prior: PriorModel, sigma2: float,
               kappa: float) -> ObjectiveValue:
    """quad_term/σ² + logdet_term, for known σ²."""
    return MarginalEvaluator(problem, prior).case2(sigma2, kappa)


# --- Exponent identities of the joint density ---
@dataclass(frozen=True, eq=False)
class ExponentDecomposition:
    """Joint exponent = posterior_term + f_y, with f_y independent of β."""

    posterior_term: float
    f_y: float
    beta_b: np.ndarray

    @property
    def total(self) -> float:
        return self.posterior_term + self.f_y


def joint_exponent(problem: InverseProblem, prior: PriorModel, beta, sigma2: float,
                   sigma_beta2: float) -> float:
    """(y − Aβ)ᵀW(y − Aβ)/σ² + (μ − β)ᵀW_β(μ − β)/σ_β²."""
    beta = np.asarray(beta, dtype=np.float64)
    residual = problem.require_y() - problem.a_matrix @ beta
    offset = prior.mu - beta
    return (float(residual @ problem.w @ residual) / sigma2
            + float(offset @ prior.w_beta @ offset) / sigma_beta2)


def exponent_decomposition(problem: InverseProblem, prior: PriorModel, beta, sigma2: float,
                           sigma_beta2: float) -> ExponentDecomposition:
    beta = np.asarray(beta, dtype=np.float64)
    beta_b = bayes_estimate(problem, prior, sigma2, sigma_beta2).beta_hat
    offset = beta - beta_b
    precision = posterior_precision(problem, prior, sigma2, sigma_beta2)
    return ExponentDecomposition(
        posterior_term=float(offset @ precision @ offset),
        f_y=joint_exponent(problem, prior, beta_b, sigma2, sigma_beta2),
        beta_b=beta_b,
    )


def normal_equations_offset(problem: InverseProblem, prior: PriorModel, sigma2: float,
                            sigma_beta2: float) -> np.ndarray:
    """μ − β̂_b = −[AᵀWA/σ² + W_β/σ_β²]⁻¹AᵀW(y − Aμ)/σ²."""
    precision = posterior_precision(problem, prior, sigma2, sigma_beta2)
    residual = problem.require_y() - problem.a_matrix @ prior.mu
    factor = cholesky_factor(precision, "posterior precision")
    return -la.cho_solve(factor, problem.weighted_rhs(residual) / sigma2)


def woodbury_precision(problem: InverseProblem, prior: PriorModel, sigma2: float,
                       sigma_beta2: float) -> np.ndarray:
    """Σ_py⁻¹ as W/σ² − (W/σ²)A[AᵀWA/σ² + W_β/σ_β²]⁻¹Aᵀ(W/σ²)."""
    precision = posterior_precision(problem, prior, sigma2, sigma_beta2)
    factor = cholesky_factor(precision, "posterior precision")
    scaled = problem.w @ problem.a_matrix / sigma2
    return _symmetrize(problem.w / sigma2 - scaled @ la.cho_solve(factor, scaled.T))


# --- κ sweep ---
def log_kappa_grid(log10_bracket: Tuple[float, float], points: int) -> np.ndarray:
    lo, hi = log10_bracket
    if not lo < hi:
        raise DomainError(f"bracket lower bound must be below upper bound, got {log10_bracket}")
    if points < 2:
        raise DomainError(f"grid needs at least 2 points, got {points}")
    return np.power(10.0, np.linspace(lo, hi, points))


def kappa_sweep(problem: InverseProblem, prior: PriorModel, kappas: Iterable[float], case: int = 1,
                sigma2: Optional[float] = None) -> List[ObjectiveValue]:
    evaluator = MarginalEvaluator(problem, prior)
    return [evaluator.objective(case, float(k), sigma2) for k in kappas]


def _fmt(value: float) -> str:
    return "%.17g" % value


def write_sweep_csv(path, values: Iterable[ObjectiveValue]) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_HEADER)
            for v in values:
                writer.writerow([_fmt(v.kappa), _fmt(v.quad_term), _fmt(v.logdet_term),
                                 _fmt(v.total), v.case_tag.value])
    except OSError as e:
        raise ProblemFileError(f"Could not write sweep file {path}: {e}", {"path": str(path)})
    logger.debug(f"Wrote {path}")
    return path
