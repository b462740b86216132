import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from abiclab.errors import DomainError
from abiclab.model import InverseProblem, PriorModel
from abiclab.sampling import (
    GENERATOR_NAME,
    Stream,
    design_rng,
    draw_noise,
    draw_prior,
    observation_rng,
    replicate_rng,
    stream_rng,
)


def test_replicate_streams_are_reproducible():
    assert replicate_rng(7, 3).standard_normal() == replicate_rng(7, 3).standard_normal()
    assert replicate_rng(7, 3).standard_normal() != replicate_rng(7, 4).standard_normal()


def test_negative_seed_rejected():
    with pytest.raises(DomainError):
        replicate_rng(-1, 0)


def test_noise_covariance_follows_weights():
    w = np.array([[2.0, 0.5], [0.5, 1.0]])
    problem = InverseProblem.create(np.eye(2), w=w)
    noise = draw_noise(problem, 1.0, replicate_rng(11, 0), size=100_000)
    assert_allclose(noise.mean(axis=0), [0.0, 0.0], atol=0.02)
    assert_allclose(np.cov(noise, rowvar=False), np.linalg.inv(w), atol=0.03)


def test_prior_draws_center_on_mean():
    prior = PriorModel.create(2, mu=[1.0, -2.0])
    draws = draw_prior(prior, 0.25, replicate_rng(12, 0), size=50_000)
    assert_allclose(draws.mean(axis=0), [1.0, -2.0], atol=0.02)
    assert_allclose(draws.var(axis=0), [0.25, 0.25], rtol=0.05)


def test_streams_do_not_overlap():
    draws = {stream: stream_rng(5, stream).standard_normal(8) for stream in Stream}
    assert_array_equal(draws[Stream.DESIGN], design_rng(5).standard_normal(8))
    assert_array_equal(draws[Stream.OBSERVATION], observation_rng(5).standard_normal(8))
    assert_array_equal(draws[Stream.REPLICATE], replicate_rng(5, 0).standard_normal(8))
    values = list(draws.values())
    for i, first in enumerate(values):
        for second in values[i + 1:]:
            assert not np.allclose(first, second)


def test_generator_name_documents_streams():
    assert "spawn_key=(stream, index)" in GENERATOR_NAME
