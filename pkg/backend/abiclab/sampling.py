"""Seeded Gaussian samplers for measurement noise and prior draws.

Every draw comes from a generator keyed by (seed, stream, index). The design
matrix, the observed noise and each Monte Carlo replicate read disjoint
streams, so they are independent of one another, replicates are order
independent and any of them can be recomputed in isolation.
"""

import logging
from enum import IntEnum
from typing import Optional

import numpy as np
import scipy.linalg as la

from abiclab.errors import DomainError
from abiclab.model import CholeskyFactor, InverseProblem, PriorModel

logger = logging.getLogger(__name__)


class Stream(IntEnum):
    DESIGN = 0
    OBSERVATION = 1
    REPLICATE = 2
    MARGINAL = 3


GENERATOR_NAME = (
    "numpy.random.PCG64 seeded by SeedSequence(entropy=seed, spawn_key=(stream, index)); "
    "streams: 0 design, 1 observation, 2 replicate, 3 marginal"
)


def stream_rng(seed: int, stream: Stream, index: int = 0) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise DomainError(f"seed and stream index must be non-negative, got {seed}, {index}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(Stream(stream)), int(index)))
    return np.random.Generator(np.random.PCG64(sequence))


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return stream_rng(seed, Stream.REPLICATE, replicate)


def design_rng(seed: int) -> np.random.Generator:
    return stream_rng(seed, Stream.DESIGN)


def observation_rng(seed: int) -> np.random.Generator:
    return stream_rng(seed, Stream.OBSERVATION)


def draw_correlated(factor: CholeskyFactor, scale2: float, rng: np.random.Generator,
                    size: Optional[int] = None) -> np.ndarray:
    """Draw zero-mean vectors with covariance scale2·M⁻¹, where M = L·Lᵀ.

    Solves Lᵀx = z for standard normal z, so cov(x) = (L·Lᵀ)⁻¹.
    With ``size`` the result has one draw per row.
    """
    if scale2 < 0:
        raise DomainError(f"variance must be non-negative, got {scale2}")
    lower = factor[0]
    dim = lower.shape[0]
    z = rng.standard_normal(dim if size is None else (size, dim))
    x = la.solve_triangular(lower, z.T, trans="T", lower=True)
    return np.sqrt(scale2) * x.T


def draw_noise(problem: InverseProblem, sigma2: float, rng: np.random.Generator,
               size: Optional[int] = None) -> np.ndarray:
    """ε ~ N(0, W⁻¹σ²)."""
    return draw_correlated(problem.w_factor, sigma2, rng, size)


def draw_prior(prior: PriorModel, sigma_beta2: float, rng: np.random.Generator,
               size: Optional[int] = None) -> np.ndarray:
    """β ~ N(μ, W_β⁻¹σ_β²)."""
    return prior.mu + draw_correlated(prior.w_beta_factor, sigma_beta2, rng, size)


def draw_marginal_samples(problem: InverseProblem, prior: PriorModel, sigma2: float,
                          sigma_beta2: float, count: int, seed: int) -> np.ndarray:
    """Draws of A·β + ε with β from the prior and ε from the noise model.

    Their mean is A·μ and their covariance is Σ_py.
    """
    rng = stream_rng(seed, Stream.MARGINAL)
    betas = draw_prior(prior, sigma_beta2, rng, size=count)
    noise = draw_noise(problem, sigma2, rng, size=count)
    return betas @ problem.a_matrix.T + noise
