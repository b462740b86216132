"""Bias of the variance estimates when the prior mean is replaced by zero.

For a fixed truth ȳ = Aβ̄ and y = ȳ + ε, the estimate (y − Aμ)ᵀE_py⁻¹(y − Aμ)/n
has expectation

    (ȳ − Aμ)ᵀE_py⁻¹(ȳ − Aμ)/n + σ²·tr(E_py⁻¹W⁻¹)/n

With μ = 0 the first (signal) term is ȳᵀE_py⁻¹ȳ/n. When β itself is drawn
from its prior N(β̄, W_β⁻¹σ²/κ), the noise term becomes exactly σ², so the
true-mean estimate is unbiased under that sampling scheme.

Monte Carlo studies draw every replicate from its own (seed, index) stream.
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from abiclab.errors import DomainError, NumericError, ProblemFileError
from abiclab.estimators import bayes_estimate
from abiclab.marginal import MarginalEvaluator
from abiclab.model import GroundTruth, InverseProblem, MuMode, PriorModel
from abiclab.sampling import GENERATOR_NAME, draw_noise, draw_prior, replicate_rng
from abiclab.selection import (
    DEFAULT_LOG10_BRACKET,
    DEFAULT_REL_TOL,
    GRID_POINTS,
    BoundaryFlag,
    select,
)

logger = logging.getLogger(__name__)

MIN_REPLICATES = 100
DEFAULT_SIGMA2_REPLICATES = 20000
DEFAULT_KAPPA_REPLICATES = 500
QUANTILE_LEVELS = (5, 25, 50, 75, 95)
DRAWS_HEADER = ["replicate", "sigma2_hat", "kappa_hat", "sigma_beta2_hat", "boundary_flag"]
FAILED_FLAG = "Failed"


class SamplingScheme(str, Enum):
    FIXED_TRUTH = "fixed"
    PRIOR_DRAWS = "prior"

    @classmethod
    def default_for(cls, mu_mode: MuMode) -> "SamplingScheme":
        return cls.PRIOR_DRAWS if mu_mode is MuMode.TRUE else cls.FIXED_TRUTH


def _check_replicates(replicates: int) -> None:
    if replicates < MIN_REPLICATES:
        raise DomainError(f"replicates must be at least {MIN_REPLICATES}, got {replicates}")


def _prior_for_mode(prior: PriorModel, mu_mode: MuMode) -> PriorModel:
    return prior.with_zero_mean() if mu_mode is MuMode.ZERO else prior


def _fmt(value: Optional[float]) -> str:
    return "nan" if value is None else "%.17g" % value


# --- Analytic expectation ---
@dataclass(frozen=True)
class BiasTerms:
    signal_term: float
    noise_term: float
    true_sigma2: float

    @property
    def expectation(self) -> float:
        return self.signal_term + self.noise_term

    @property
    def bias(self) -> float:
        return self.expectation - self.true_sigma2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "signal_term": self.signal_term,
            "noise_term": self.noise_term,
            "expectation": self.expectation,
            "bias": self.bias,
        }


def sigma2_bias_terms(problem: InverseProblem, ground_truth: GroundTruth, prior: PriorModel,
                      sigma2: float, kappa: float,
                      sampling: Union[SamplingScheme, str] = SamplingScheme.FIXED_TRUTH) -> BiasTerms:
    """Signal and noise parts of E[σ̂²] when the estimate uses ``prior.mu``."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    evaluator = MarginalEvaluator(problem, prior)
    n = problem.n
    if SamplingScheme(sampling) is SamplingScheme.PRIOR_DRAWS:
        shift = problem.a_matrix @ (ground_truth.beta_bar - prior.mu)
        noise = float(sigma2)
    else:
        shift = ground_truth.y_bar - problem.a_matrix @ prior.mu
        noise = sigma2 * evaluator.trace_e_inv_w_inv(kappa) / n
    signal = float(evaluator.quad_forms(shift, kappa)[0]) / n
    return BiasTerms(signal_term=signal, noise_term=noise, true_sigma2=float(sigma2))


def expected_sigma2_mu_zero(problem: InverseProblem, ground_truth: GroundTruth, sigma2: float,
                            kappa: float, w_beta=None) -> float:
    """E[σ̂²_s] = ȳᵀE_py⁻¹ȳ/n + tr(E_py⁻¹W⁻¹)σ²/n for a fixed truth and μ = 0."""
    prior = PriorModel.create(problem.t, w_beta=w_beta)
    return sigma2_bias_terms(problem, ground_truth, prior, sigma2, kappa).expectation


# --- σ² study ---
@dataclass(frozen=True)
class BiasReport:
    analytic_expectation: float
    mc_mean: float
    mc_std_error: float
    replicates: int
    seed: int
    kappa_used: float
    true_sigma2: float
    mu_mode: MuMode
    sampling: SamplingScheme
    signal_term: float
    noise_term: float
    generator: str = GENERATOR_NAME

    @property
    def z_score(self) -> float:
        return (self.mc_mean - self.analytic_expectation) / self.mc_std_error

    def to_dict(self) -> Dict[str, Any]:
        return {
            "study": "sigma2",
            "analytic_expectation": self.analytic_expectation,
            "mc_mean": self.mc_mean,
            "mc_std_error": self.mc_std_error,
            "replicates": self.replicates,
            "seed": self.seed,
            "kappa_used": self.kappa_used,
            "true_sigma2": self.true_sigma2,
            "mu_mode": self.mu_mode.value,
            "sampling": self.sampling.value,
            "signal_term": self.signal_term,
            "noise_term": self.noise_term,
            "bias": self.analytic_expectation - self.true_sigma2,
            "generator": self.generator,
        }


def _draw_observation(problem: InverseProblem, ground_truth: GroundTruth, truth_prior: PriorModel,
                      sigma2: float, kappa: float, sampling: SamplingScheme,
                      rng: np.random.Generator) -> np.ndarray:
    if sampling is SamplingScheme.PRIOR_DRAWS:
        beta = draw_prior(truth_prior, sigma2 / kappa, rng)
        return problem.a_matrix @ beta + draw_noise(problem, sigma2, rng)
    return ground_truth.y_bar + draw_noise(problem, sigma2, rng)


def mc_sigma2_study(problem: InverseProblem, ground_truth: GroundTruth, prior: PriorModel,
                    sigma2: float, kappa: float, replicates: int = DEFAULT_SIGMA2_REPLICATES,
                    seed: int = 0, mu_mode: Union[MuMode, str] = MuMode.ZERO,
                    sampling: Optional[Union[SamplingScheme, str]] = None) -> BiasReport:
    """Monte Carlo mean of σ̂² at a fixed κ against its analytic expectation.

    By default the true-mean mode draws β from its prior (where σ̂² is
    unbiased) and the zero-mean mode holds the truth fixed.
    """
    _check_replicates(replicates)
    if not kappa > 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    mu_mode = MuMode(mu_mode)
    sampling = SamplingScheme.default_for(mu_mode) if sampling is None else SamplingScheme(sampling)
    used = _prior_for_mode(prior, mu_mode)
    truth_prior = prior.with_mean(ground_truth.beta_bar)
    terms = sigma2_bias_terms(problem, ground_truth, used, sigma2, kappa, sampling)

    residuals = np.empty((replicates, problem.n))
    offset = problem.a_matrix @ used.mu
    for r in range(replicates):
        y = _draw_observation(problem, ground_truth, truth_prior, sigma2, kappa, sampling,
                              replicate_rng(seed, r))
        residuals[r] = y - offset
    estimates = MarginalEvaluator(problem, used).quad_forms(residuals, kappa) / problem.n

    report = BiasReport(
        analytic_expectation=terms.expectation,
        mc_mean=float(np.mean(estimates)),
        mc_std_error=float(np.std(estimates, ddof=1) / np.sqrt(replicates)),
        replicates=replicates,
        seed=seed,
        kappa_used=float(kappa),
        true_sigma2=float(sigma2),
        mu_mode=mu_mode,
        sampling=sampling,
        signal_term=terms.signal_term,
        noise_term=terms.noise_term,
    )
    logger.info(
        f"sigma2 study ({mu_mode.value} mean, {sampling.value}): mc_mean={report.mc_mean:.6e} "
        f"analytic={report.analytic_expectation:.6e} z={report.z_score:.2f}"
    )
    return report


# --- κ̂ study ---
@dataclass(frozen=True)
class ReplicateDraw:
    replicate: int
    sigma2_hat: Optional[float]
    kappa_hat: Optional[float]
    sigma_beta2_hat: Optional[float]
    boundary_flag: str
    solution_error: Optional[float] = None

    @property
    def failed(self) -> bool:
        return self.boundary_flag == FAILED_FLAG


def _quantiles(values: List[float]) -> Optional[Dict[str, float]]:
    if not values:
        return None
    levels = np.percentile(np.asarray(values), QUANTILE_LEVELS)
    return {f"q{p}": float(v) for p, v in zip(QUANTILE_LEVELS, levels)}


@dataclass(frozen=True)
class ModeSummary:
    mu_mode: MuMode
    draws: List[ReplicateDraw] = field(default_factory=list)

    @property
    def succeeded(self) -> List[ReplicateDraw]:
        return [d for d in self.draws if not d.failed]

    @property
    def failures(self) -> int:
        return len(self.draws) - len(self.succeeded)

    @property
    def boundary_fraction(self) -> float:
        ok = self.succeeded
        if not ok:
            return 0.0
        return sum(1 for d in ok if d.boundary_flag != BoundaryFlag.INTERIOR.value) / len(ok)

    def quantiles(self, name: str) -> Optional[Dict[str, float]]:
        return _quantiles([getattr(d, name) for d in self.succeeded])

    @property
    def median_kappa(self) -> Optional[float]:
        q = self.quantiles("kappa_hat")
        return None if q is None else q["q50"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu_mode": self.mu_mode.value,
            "succeeded": len(self.succeeded),
            "failures": self.failures,
            "boundary_fraction": self.boundary_fraction,
            "kappa_hat": self.quantiles("kappa_hat"),
            "sigma2_hat": self.quantiles("sigma2_hat"),
            "sigma_beta2_hat": self.quantiles("sigma_beta2_hat"),
            "solution_error": self.quantiles("solution_error"),
        }


@dataclass(frozen=True)
class KappaStudyReport:
    case: int
    replicates: int
    seed: int
    true_sigma2: float
    sampling: SamplingScheme
    true_mu: ModeSummary
    zero_mu: ModeSummary
    generator: str = GENERATOR_NAME

    @property
    def median_kappa_ratio(self) -> Optional[float]:
        """Median κ̂ with μ = 0 over median κ̂ with the true μ."""
        true_median, zero_median = self.true_mu.median_kappa, self.zero_mu.median_kappa
        if true_median is None or zero_median is None:
            return None
        return zero_median / true_median

    @property
    def direction(self) -> Optional[str]:
        ratio = self.median_kappa_ratio
        if ratio is None:
            return None
        if ratio < 1.0:
            return "smaller"
        return "larger" if ratio > 1.0 else "equal"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "study": "kappa",
            "case": self.case,
            "replicates": self.replicates,
            "seed": self.seed,
            "true_sigma2": self.true_sigma2,
            "sampling": self.sampling.value,
            "generator": self.generator,
            "true_mu": self.true_mu.to_dict(),
            "zero_mu": self.zero_mu.to_dict(),
            "median_kappa_ratio_zero_over_true": self.median_kappa_ratio,
            "zero_mu_kappa_direction": self.direction,
        }


def _run_replicate(problem: InverseProblem, y: np.ndarray, prior: PriorModel, beta_bar: np.ndarray,
                   case: int, sigma2: float, replicate: int, search: Dict[str, Any]) -> ReplicateDraw:
    observed = problem.with_observations(y)
    try:
        result = select(observed, prior, case, sigma2=sigma2 if case == 2 else None, **search)
        beta_b = bayes_estimate(observed, prior, result.sigma2, result.sigma_beta2_hat).beta_hat
    except NumericError as e:
        logger.warning(f"⚠️ Replicate {replicate} failed: {e.message}")
        return ReplicateDraw(replicate, None, None, None, FAILED_FLAG)
    error = float(np.linalg.norm(beta_b - beta_bar) / np.linalg.norm(beta_bar))
    return ReplicateDraw(
        replicate=replicate,
        sigma2_hat=result.sigma2,
        kappa_hat=result.kappa_hat,
        sigma_beta2_hat=result.sigma_beta2_hat,
        boundary_flag=result.boundary_flag.value,
        solution_error=error,
    )


def mc_kappa_study(problem: InverseProblem, ground_truth: GroundTruth, prior: PriorModel,
                   sigma2: float, replicates: int = DEFAULT_KAPPA_REPLICATES, seed: int = 0,
                   case: int = 1, log10_bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET,
                   rel_tol: float = DEFAULT_REL_TOL, grid_points: int = GRID_POINTS,
                   sampling: Union[SamplingScheme, str] = SamplingScheme.FIXED_TRUTH) -> KappaStudyReport:
    """Paired selection runs with the true μ and with μ = 0 on the same draws."""
    _check_replicates(replicates)
    if case not in (1, 2):
        raise DomainError(f"case must be 1 or 2, got {case}")
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    sampling = SamplingScheme(sampling)
    search = {"log10_bracket": log10_bracket, "rel_tol": rel_tol, "grid_points": grid_points}
    if sampling is SamplingScheme.PRIOR_DRAWS and prior.sigma_beta2 is None:
        raise DomainError("prior draws need prior.sigma_beta2")
    truth_prior = prior.with_mean(ground_truth.beta_bar)
    kappa_draw = sigma2 / prior.sigma_beta2 if prior.sigma_beta2 else 1.0
    priors = {MuMode.TRUE: prior, MuMode.ZERO: prior.with_zero_mean()}
    draws: Dict[MuMode, List[ReplicateDraw]] = {MuMode.TRUE: [], MuMode.ZERO: []}

    for r in range(replicates):
        y = _draw_observation(problem, ground_truth, truth_prior, sigma2, kappa_draw, sampling,
                              replicate_rng(seed, r))
        for mode, mode_prior in priors.items():
            draws[mode].append(_run_replicate(problem, y, mode_prior, ground_truth.beta_bar,
                                              case, sigma2, r, search))

    report = KappaStudyReport(
        case=case,
        replicates=replicates,
        seed=seed,
        true_sigma2=float(sigma2),
        sampling=sampling,
        true_mu=ModeSummary(MuMode.TRUE, draws[MuMode.TRUE]),
        zero_mu=ModeSummary(MuMode.ZERO, draws[MuMode.ZERO]),
    )
    logger.info(
        f"kappa study (case {case}): median ratio zero/true={report.median_kappa_ratio}, "
        f"failures true={report.true_mu.failures} zero={report.zero_mu.failures}"
    )
    return report


def write_draws_csv(path, summary: ModeSummary) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(DRAWS_HEADER)
            for d in summary.draws:
                writer.writerow([d.replicate, _fmt(d.sigma2_hat), _fmt(d.kappa_hat),
                                 _fmt(d.sigma_beta2_hat), d.boundary_flag])
    except OSError as e:
        raise ProblemFileError(f"Could not write draws file {path}: {e}", {"path": str(path)})
    return path
