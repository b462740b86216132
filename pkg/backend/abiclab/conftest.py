import numpy as np
import pytest

from abiclab.model import InverseProblem, PriorModel
from abiclab.problems import phillips_problem


def spd_matrix(rng: np.random.Generator, size: int, jitter: float = 0.5) -> np.ndarray:
    b = rng.standard_normal((size, size))
    return b @ b.T / size + jitter * np.eye(size)


@pytest.fixture
def pair_problem():
    """A=[[1],[1]], W=I₂, y=[1,1]."""
    return InverseProblem.create([[1.0], [1.0]], y=[1.0, 1.0])


@pytest.fixture
def zero_prior_1d():
    return PriorModel.create(1)


@pytest.fixture
def scalar_problem():
    """A=[2], W=[1], y=[7]."""
    return InverseProblem.create([[2.0]], y=[7.0], w=[[1.0]])


@pytest.fixture
def scalar_prior():
    return PriorModel.create(1, mu=[3.0], w_beta=[[1.0]])


@pytest.fixture
def random_fixture():
    """Factory for seeded random (problem, prior) pairs with non-identity weights."""

    def make(seed: int, n: int = 12, t: int = 4, weighted: bool = True):
        rng = np.random.default_rng(seed)
        a_matrix = rng.standard_normal((n, t))
        w = spd_matrix(rng, n) if weighted else None
        y = rng.standard_normal(n)
        problem = InverseProblem.create(a_matrix, y=y, w=w)
        prior = PriorModel.create(t, mu=rng.standard_normal(t), w_beta=spd_matrix(rng, t))
        return problem, prior

    return make


@pytest.fixture(scope="session")
def phillips32():
    return phillips_problem(32)
