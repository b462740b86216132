"""Choosing κ by minimizing the ABIC objectives.

The search is derivative free: a uniform grid in log₁₀κ locates the basin,
then golden-section refinement narrows the bracketing triple around the grid
minimum. A grid minimum on either edge is reported as such and not refined.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from abiclab.errors import DomainError, EvaluationError, FactorizationError
from abiclab.marginal import CaseTag, ComputationPath, MarginalEvaluator, ObjectiveValue
from abiclab.model import InverseProblem, PriorModel

logger = logging.getLogger(__name__)

DEFAULT_LOG10_BRACKET = (-12.0, 12.0)
GRID_POINTS = 97
DEFAULT_REL_TOL = 1e-6
MAX_REFINE_ITERATIONS = 200
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class BoundaryFlag(str, Enum):
    INTERIOR = "Interior"
    LOWER_EDGE = "LowerEdge"
    UPPER_EDGE = "UpperEdge"


@dataclass(frozen=True)
class ScalarMinimum:
    kappa_hat: float
    objective_at_min: float
    boundary_flag: BoundaryFlag
    trace: List[Tuple[float, float]]
    evaluations: int


def _safe_eval(objective: Callable[[float], float], kappa: float) -> float:
    try:
        value = float(objective(kappa))
    except (np.linalg.LinAlgError, FactorizationError, FloatingPointError) as e:
        logger.debug(f"Objective failed at kappa={kappa:.6g}: {e}")
        return math.inf
    return value if math.isfinite(value) else math.inf


def _check_search(log10_bracket: Tuple[float, float], rel_tol: float, grid_points: int) -> None:
    lo, hi = log10_bracket
    if not lo < hi:
        raise DomainError(f"bracket lower bound must be below upper bound, got {log10_bracket}")
    if not rel_tol > 0:
        raise DomainError(f"rel_tol must be positive, got {rel_tol}")
    if grid_points < 3:
        raise DomainError(f"grid needs at least 3 points, got {grid_points}")


def minimize_scalar(objective: Callable[[float], float],
                    log10_bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET,
                    rel_tol: float = DEFAULT_REL_TOL,
                    grid_points: int = GRID_POINTS) -> ScalarMinimum:
    """Minimize objective(κ) over κ = 10^x, x within ``log10_bracket``.

    Grid ties go to the smaller κ. Refinement stops once the bracket is
    narrower than log₁₀(1 + rel_tol), i.e. κ is known to rel_tol.
    """
    _check_search(log10_bracket, rel_tol, grid_points)
    xs = np.linspace(log10_bracket[0], log10_bracket[1], grid_points)
    values = [_safe_eval(objective, 10.0 ** x) for x in xs]
    trace = [(float(10.0 ** x), v) for x, v in zip(xs, values)]

    failed = sum(1 for v in values if v == math.inf)
    if failed * 2 > grid_points:
        raise EvaluationError(
            f"Objective non-finite at {failed} of {grid_points} grid points",
            {"failed": failed, "grid_points": grid_points},
        )

    i = int(np.argmin(values))
    if i == 0 or i == grid_points - 1:
        flag = BoundaryFlag.LOWER_EDGE if i == 0 else BoundaryFlag.UPPER_EDGE
        return ScalarMinimum(
            kappa_hat=trace[i][0], objective_at_min=values[i], boundary_flag=flag,
            trace=trace, evaluations=grid_points,
        )

    best_x, best_f = float(xs[i]), values[i]
    evaluations = grid_points

    def consider(x: float, fx: float) -> None:
        nonlocal best_x, best_f
        if fx < best_f or (fx == best_f and x < best_x):
            best_x, best_f = x, fx

    a, b = float(xs[i - 1]), float(xs[i + 1])
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = _safe_eval(objective, 10.0 ** c)
    fd = _safe_eval(objective, 10.0 ** d)
    evaluations += 2
    consider(c, fc)
    consider(d, fd)

    tol = math.log10(1.0 + rel_tol)
    iterations = 0
    while b - a > tol and iterations < MAX_REFINE_ITERATIONS:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = _safe_eval(objective, 10.0 ** c)
            consider(c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = _safe_eval(objective, 10.0 ** d)
            consider(d, fd)
        evaluations += 1
        iterations += 1
    logger.debug(f"Golden-section refinement finished after {iterations} iterations")

    return ScalarMinimum(
        kappa_hat=float(10.0 ** best_x), objective_at_min=best_f,
        boundary_flag=BoundaryFlag.INTERIOR, trace=trace, evaluations=evaluations,
    )


@dataclass(frozen=True, eq=False)
class SelectionResult:
    case: CaseTag
    kappa_hat: float
    sigma_beta2_hat: float
    objective_at_min: float
    boundary_flag: BoundaryFlag
    mu_assumed_zero: bool
    trace: List[ObjectiveValue] = field(default_factory=list)
    sigma2_hat: Optional[float] = None
    sigma2_given: Optional[float] = None
    evaluations: int = 0
    bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET
    rel_tol: float = DEFAULT_REL_TOL

    @property
    def sigma2(self) -> float:
        """The σ² the result was built with: estimated (Case 1) or given (Case 2)."""
        return self.sigma2_hat if self.sigma2_hat is not None else self.sigma2_given

    @property
    def is_boundary(self) -> bool:
        return self.boundary_flag is not BoundaryFlag.INTERIOR

    def to_dict(self) -> Dict[str, Any]:
        return {
            "case": self.case.value,
            "kappa_hat": self.kappa_hat,
            "sigma2_hat": self.sigma2_hat,
            "sigma2_given": self.sigma2_given,
            "sigma_beta2_hat": self.sigma_beta2_hat,
            "objective_at_min": self.objective_at_min,
            "boundary_flag": self.boundary_flag.value,
            "mu_assumed_zero": self.mu_assumed_zero,
            "evaluations": self.evaluations,
            "bracket": list(self.bracket),
            "rel_tol": self.rel_tol,
            "trace": [[v.kappa, v.total] for v in self.trace],
        }


def _search(evaluate: Callable[[float], ObjectiveValue], log10_bracket, rel_tol,
            grid_points) -> Tuple[ScalarMinimum, List[ObjectiveValue]]:
    seen: Dict[float, ObjectiveValue] = {}

    def objective(kappa: float) -> float:
        value = evaluate(kappa)
        seen[kappa] = value
        return value.total

    minimum = minimize_scalar(objective, log10_bracket, rel_tol, grid_points)
    trace = [seen[k] for k, _ in minimum.trace if k in seen and math.isfinite(seen[k].total)]
    if minimum.boundary_flag is not BoundaryFlag.INTERIOR:
        logger.warning(
            f"⚠️ Objective minimum at the {minimum.boundary_flag.value} of the bracket "
            f"(kappa={minimum.kappa_hat:.3e}); widen --bracket or inspect the trace"
        )
    return minimum, trace


def select_case1(problem: InverseProblem, prior: PriorModel,
                 log10_bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET,
                 rel_tol: float = DEFAULT_REL_TOL, grid_points: int = GRID_POINTS,
                 path: Union[ComputationPath, str] = ComputationPath.AUTO) -> SelectionResult:
    """Both variances unknown: minimize n·ln(quad) + ln det E_py, then σ̂² = quad/n."""
    evaluator = MarginalEvaluator(problem, prior, path)
    minimum, trace = _search(evaluator.case1, log10_bracket, rel_tol, grid_points)
    at_min = evaluator.case1(minimum.kappa_hat)
    sigma2_hat = at_min.quad_term / problem.n
    logger.info(f"Case 1 selected kappa={minimum.kappa_hat:.6e}, sigma2_hat={sigma2_hat:.6e}")
    return SelectionResult(
        case=at_min.case_tag,
        kappa_hat=minimum.kappa_hat,
        sigma2_hat=sigma2_hat,
        sigma_beta2_hat=sigma2_hat / minimum.kappa_hat,
        objective_at_min=minimum.objective_at_min,
        boundary_flag=minimum.boundary_flag,
        mu_assumed_zero=prior.mu_assumed_zero,
        trace=trace,
        evaluations=minimum.evaluations,
        bracket=tuple(float(x) for x in log10_bracket),
        rel_tol=rel_tol,
    )


def select_case2(problem: InverseProblem, prior: PriorModel, sigma2: float,
                 log10_bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET,
                 rel_tol: float = DEFAULT_REL_TOL, grid_points: int = GRID_POINTS,
                 path: Union[ComputationPath, str] = ComputationPath.AUTO) -> SelectionResult:
    """Known σ²: minimize quad/σ² + ln det E_py; σ̂_β² = σ²/κ̂."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    evaluator = MarginalEvaluator(problem, prior, path)
    minimum, trace = _search(lambda k: evaluator.case2(sigma2, k), log10_bracket, rel_tol, grid_points)
    logger.info(f"Case 2 selected kappa={minimum.kappa_hat:.6e}")
    return SelectionResult(
        case=CaseTag.for_case(2, prior.is_zero_mean),
        kappa_hat=minimum.kappa_hat,
        sigma2_given=float(sigma2),
        sigma_beta2_hat=sigma2 / minimum.kappa_hat,
        objective_at_min=minimum.objective_at_min,
        boundary_flag=minimum.boundary_flag,
        mu_assumed_zero=prior.mu_assumed_zero,
        trace=trace,
        evaluations=minimum.evaluations,
        bracket=tuple(float(x) for x in log10_bracket),
        rel_tol=rel_tol,
    )


def select(problem: InverseProblem, prior: PriorModel, case: int, sigma2: Optional[float] = None,
           **search) -> SelectionResult:
    if case == 1:
        return select_case1(problem, prior, **search)
    if case == 2:
        if sigma2 is None:
            raise DomainError("Case 2 needs a known sigma2")
        return select_case2(problem, prior, sigma2, **search)
    raise DomainError(f"case must be 1 or 2, got {case}")
