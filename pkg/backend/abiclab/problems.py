"""Reproducible ill-posed test problems and synthetic observations."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la

from abiclab.errors import DimensionError, DomainError
from abiclab.model import GroundTruth, InverseProblem, MuMode, PriorModel
from abiclab.sampling import design_rng, draw_noise, observation_rng

logger = logging.getLogger(__name__)

PHILLIPS_HALF_WIDTH = 6.0
DEFAULT_DECAY = 4.0


class ProblemKind(str, Enum):
    PHILLIPS = "phillips"
    SPECTRUM = "spectrum"


@dataclass(frozen=True)
class GeneratorSpec:
    kind: ProblemKind
    n: int
    t: Optional[int] = None
    decay: float = DEFAULT_DECAY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        if self.kind is ProblemKind.PHILLIPS:
            if self.n < 8 or self.n % 4:
                raise DomainError(f"Phillips problem needs n >= 8 and divisible by 4, got n={self.n}")
            if self.t not in (None, self.n):
                raise DomainError(f"Phillips problem is square; t={self.t} does not match n={self.n}")
            object.__setattr__(self, "t", self.n)
        else:
            if self.t is None:
                raise DomainError("Spectrum problem needs t")
            if not self.n >= self.t >= 2:
                raise DomainError(f"Spectrum problem needs n >= t >= 2, got n={self.n}, t={self.t}")
            if not self.decay >= 0:
                raise DomainError(f"decay must be non-negative, got {self.decay}")
        if self.seed < 0:
            raise DomainError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value, "n": self.n, "t": self.t}
        if self.kind is ProblemKind.SPECTRUM:
            data["decay"] = self.decay
            data["seed"] = self.seed
        return data


@dataclass(frozen=True, eq=False)
class GeneratedProblem:
    problem: InverseProblem
    exact_solution: np.ndarray
    spec: GeneratorSpec


def _theta(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 3.0, 1.0 + np.cos(np.pi * x / 3.0), 0.0)


def phillips_problem(n: int) -> Tuple[InverseProblem, np.ndarray]:
    """Midpoint discretization of the Phillips convolution equation on [−6, 6].

    Kernel θ(s − u) with θ(x) = 1 + cos(πx/3) for |x| < 3, zero elsewhere.
    """
    spec = GeneratorSpec(kind=ProblemKind.PHILLIPS, n=n)
    h = 2.0 * PHILLIPS_HALF_WIDTH / spec.n
    s = -PHILLIPS_HALF_WIDTH + (np.arange(spec.n) + 0.5) * h
    a_matrix = _theta(np.abs(s[:, None] - s[None, :])) * h
    exact = _theta(s)
    return InverseProblem.create(a_matrix), exact


def orthonormal_factors(rng: np.random.Generator, n: int, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """U (n×t) with orthonormal columns and orthogonal V (t×t) from Gaussian draws."""
    u, _ = la.qr(rng.standard_normal((n, t)), mode="economic")
    v, _ = la.qr(rng.standard_normal((t, t)))
    return u, v


def spectrum_problem(n: int, t: int, decay: float, seed: int) -> Tuple[InverseProblem, np.ndarray]:
    """A = U·diag(sv)·Vᵀ with sv_i = 10^(−decay·i/(t−1)) and seeded orthonormal U, V."""
    spec = GeneratorSpec(kind=ProblemKind.SPECTRUM, n=n, t=t, decay=decay, seed=seed)
    rng = design_rng(spec.seed)
    u, v = orthonormal_factors(rng, spec.n, spec.t)
    singular_values = np.power(10.0, -spec.decay * np.arange(spec.t) / (spec.t - 1))
    a_matrix = (u * singular_values) @ v.T

    # Smooth truth: a seeded quadratic on [−1, 1], unit norm
    coefficients = rng.standard_normal(3)
    grid = np.linspace(-1.0, 1.0, spec.t)
    exact = coefficients[0] + coefficients[1] * grid + coefficients[2] * grid ** 2
    exact = exact / np.linalg.norm(exact)
    return InverseProblem.create(a_matrix), exact


def generate(spec: GeneratorSpec) -> GeneratedProblem:
    if spec.kind is ProblemKind.PHILLIPS:
        problem, exact = phillips_problem(spec.n)
    else:
        problem, exact = spectrum_problem(spec.n, spec.t, spec.decay, spec.seed)
    logger.debug(f"Generated {spec.kind.value} problem n={problem.n} t={problem.t}")
    return GeneratedProblem(problem=problem, exact_solution=exact, spec=spec)


def synthesize_observations(problem: InverseProblem, exact_solution, sigma2: float,
                            seed: int) -> Tuple[np.ndarray, GroundTruth]:
    """y = A·β̄ + ε with ε ~ N(0, W⁻¹σ²) drawn from the seed's observation stream."""
    if sigma2 < 0:
        raise DomainError(f"sigma2 must be non-negative, got {sigma2}")
    truth = GroundTruth.from_solution(problem, exact_solution)
    if sigma2 == 0:
        return truth.y_bar.copy(), truth
    y = truth.y_bar + draw_noise(problem, sigma2, observation_rng(seed))
    return y, truth


def default_prior(problem: InverseProblem, exact_solution,
                  mu_mode: Union[MuMode, str] = MuMode.TRUE) -> PriorModel:
    """W_β = I with μ = β̄ (true mode) or μ assumed zero."""
    if MuMode(mu_mode) is MuMode.ZERO:
        return PriorModel.create(problem.t)
    exact = np.asarray(exact_solution, dtype=np.float64)
    if exact.shape != (problem.t,):
        raise DimensionError("exact_solution", (problem.t,), exact.shape)
    return PriorModel.create(problem.t, mu=exact)
