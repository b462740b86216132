"""Point estimators of β and the Gaussian densities they derive from.

Every linear system is solved through a Cholesky factorization of a t×t
(regularized) normal matrix; nothing is inverted explicitly. Densities are
only exposed in log space.
"""

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
import scipy.linalg as la

from abiclab.errors import (
    DomainError,
    FactorizationError,
    NumericError,
    RankDeficiencyWarning,
    SingularMatrixError,
)
from abiclab.model import (
    Hyperparameters,
    InverseProblem,
    PriorModel,
    cholesky_factor,
    condition_estimate,
    is_rank_deficient,
)

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class EstimatorMethod(str, Enum):
    LS = "LS"
    REGULARIZED = "Regularized"
    BAYES = "Bayes"
    BAYES_ZERO_MEAN = "BayesZeroMean"


@dataclass(frozen=True, eq=False)
class Estimate:
    beta_hat: np.ndarray
    method: EstimatorMethod
    sigma2: Optional[float] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.beta_hat)):
            raise NumericError(f"{self.method.value} estimate has non-finite entries")
        self.beta_hat.setflags(write=False)

    @property
    def hyper(self) -> Optional[Hyperparameters]:
        if self.sigma2 is None or not self.kappa:
            return None
        return Hyperparameters(sigma2=self.sigma2, kappa=self.kappa)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "beta_hat": self.beta_hat.tolist(),
            "sigma2": self.sigma2,
            "kappa": self.kappa,
        }


def _check_variances(sigma2: float, sigma_beta2: float) -> None:
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if not sigma_beta2 > 0:
        raise DomainError(f"sigma_beta2 must be positive, got {sigma_beta2}")


def _solve_regularized(problem: InverseProblem, w_beta: np.ndarray, kappa: float,
                       rhs: np.ndarray) -> np.ndarray:
    """Solve (AᵀWA + κW_β)x = rhs."""
    matrix = problem.normal_matrix + kappa * w_beta
    factor = cholesky_factor(matrix, "A^T W A + kappa W_beta")
    return la.cho_solve(factor, rhs)


def ls_estimate(problem: InverseProblem) -> Estimate:
    """Weighted least squares: (AᵀWA)β̂ = AᵀWy."""
    y = problem.require_y()
    if is_rank_deficient(problem):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            cond = condition_estimate(problem)
        raise SingularMatrixError(
            f"Normal matrix is numerically singular (condition of A {cond:.3e})", cond
        )
    try:
        factor = cholesky_factor(problem.normal_matrix, "A^T W A")
    except FactorizationError:
        cond = condition_estimate(problem)
        raise SingularMatrixError(
            f"Normal matrix could not be factorized (condition of A {cond:.3e})", cond
        )
    beta = la.cho_solve(factor, problem.weighted_rhs(y))
    return Estimate(beta_hat=beta, method=EstimatorMethod.LS)


def regularized_estimate(problem: InverseProblem, w_beta, kappa: float) -> Estimate:
    """Regularized solution: (AᵀWA + κW_β)β̂_r = AᵀWy."""
    if kappa < 0:
        raise DomainError(f"kappa must be non-negative, got {kappa}")
    if kappa == 0:
        estimate = ls_estimate(problem)
        return Estimate(beta_hat=estimate.beta_hat.copy(), method=EstimatorMethod.REGULARIZED, kappa=0.0)
    w_beta = np.asarray(w_beta, dtype=np.float64)
    y = problem.require_y()
    if is_rank_deficient(problem):
        logger.warning("⚠️ A is numerically rank deficient; relying on regularization")
        warnings.warn("A is numerically rank deficient", RankDeficiencyWarning, stacklevel=2)
    beta = _solve_regularized(problem, w_beta, kappa, problem.weighted_rhs(y))
    return Estimate(beta_hat=beta, method=EstimatorMethod.REGULARIZED, kappa=float(kappa))


def bayes_estimate(problem: InverseProblem, prior: PriorModel, sigma2: float,
                   sigma_beta2: float) -> Estimate:
    """Posterior mean/mode in κ form: (AᵀWA + κW_β)β̂_b = AᵀWy + κW_βμ.

    With μ = 0 this performs exactly the arithmetic of regularized_estimate.
    """
    _check_variances(sigma2, sigma_beta2)
    y = problem.require_y()
    kappa = sigma2 / sigma_beta2
    rhs = problem.weighted_rhs(y) + kappa * (prior.w_beta @ prior.mu)
    beta = _solve_regularized(problem, prior.w_beta, kappa, rhs)
    method = EstimatorMethod.BAYES_ZERO_MEAN if prior.is_zero_mean else EstimatorMethod.BAYES
    return Estimate(beta_hat=beta, method=method, sigma2=float(sigma2), kappa=kappa)


def posterior_precision(problem: InverseProblem, prior: PriorModel, sigma2: float,
                        sigma_beta2: float) -> np.ndarray:
    """AᵀWA/σ² + W_β/σ_β²."""
    _check_variances(sigma2, sigma_beta2)
    return problem.normal_matrix / sigma2 + prior.w_beta / sigma_beta2


def stochastic_inference_estimate(problem: InverseProblem, prior: PriorModel, sigma2: float,
                                  sigma_beta2: float) -> Estimate:
    """The same estimator written with both variances kept separate.

    Solved independently of bayes_estimate so the two can be cross-checked.
    """
    y = problem.require_y()
    precision = posterior_precision(problem, prior, sigma2, sigma_beta2)
    rhs = problem.weighted_rhs(y) / sigma2 + prior.w_beta @ prior.mu / sigma_beta2
    beta = la.solve(precision, rhs, assume_a="pos")
    method = EstimatorMethod.BAYES_ZERO_MEAN if prior.is_zero_mean else EstimatorMethod.BAYES
    return Estimate(beta_hat=beta, method=method, sigma2=float(sigma2), kappa=sigma2 / sigma_beta2)


def weighted_mean_estimate(problem: InverseProblem, prior: PriorModel, sigma2: float,
                           sigma_beta2: float) -> Estimate:
    """Bayes estimate as the precision-weighted mean of the LS estimate and μ."""
    ls = ls_estimate(problem)
    precision = posterior_precision(problem, prior, sigma2, sigma_beta2)
    rhs = problem.normal_matrix @ ls.beta_hat / sigma2 + prior.w_beta @ prior.mu / sigma_beta2
    factor = cholesky_factor(precision, "posterior precision")
    method = EstimatorMethod.BAYES_ZERO_MEAN if prior.is_zero_mean else EstimatorMethod.BAYES
    return Estimate(beta_hat=la.cho_solve(factor, rhs), method=method,
                    sigma2=float(sigma2), kappa=sigma2 / sigma_beta2)


def log_likelihood(problem: InverseProblem, beta: np.ndarray, sigma2: float) -> float:
    """log f_y(y | β, σ²) including the normalizing constant."""
    y = problem.require_y()
    residual = y - problem.a_matrix @ np.asarray(beta, dtype=np.float64)
    quad = float(residual @ problem.w @ residual)
    n = problem.n
    return 0.5 * problem.w_logdet - 0.5 * n * LOG_2PI - 0.5 * n * np.log(sigma2) - 0.5 * quad / sigma2


def log_prior_density(prior: PriorModel, beta: np.ndarray, sigma_beta2: float) -> float:
    """log π_β(β | σ_β²) including the normalizing constant."""
    offset = np.asarray(beta, dtype=np.float64) - prior.mu
    quad = float(offset @ prior.w_beta @ offset)
    t = prior.t
    return (0.5 * prior.w_beta_logdet - 0.5 * t * LOG_2PI - 0.5 * t * np.log(sigma_beta2)
            - 0.5 * quad / sigma_beta2)


def log_joint_density(problem: InverseProblem, prior: PriorModel, beta, sigma2: float,
                      sigma_beta2: float) -> float:
    _check_variances(sigma2, sigma_beta2)
    return log_likelihood(problem, beta, sigma2) + log_prior_density(prior, beta, sigma_beta2)


def log_posterior_density(problem: InverseProblem, prior: PriorModel, beta, sigma2: float,
                          sigma_beta2: float) -> float:
    """Joint over marginal, in log space; maximized at the Bayes estimate."""
    from abiclab.marginal import log_marginal_density

    return (log_joint_density(problem, prior, beta, sigma2, sigma_beta2)
            - log_marginal_density(problem, prior, sigma2, sigma_beta2))
