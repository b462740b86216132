import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from abiclab.errors import DomainError
from abiclab.model import MuMode, condition_estimate
from abiclab.problems import (
    GeneratorSpec,
    ProblemKind,
    default_prior,
    generate,
    orthonormal_factors,
    phillips_problem,
    spectrum_problem,
    synthesize_observations,
)
from abiclab.sampling import design_rng, observation_rng, replicate_rng


class TestPhillips:
    def test_square_and_symmetric(self, phillips32):
        problem, exact = phillips32
        assert (problem.n, problem.t) == (32, 32)
        assert_allclose(problem.a_matrix, problem.a_matrix.T)
        assert exact.shape == (32,)

    def test_ill_conditioned(self, phillips32):
        problem, _ = phillips32
        cond = condition_estimate(problem)
        assert cond > 1e2
        assert cond == pytest.approx(np.linalg.cond(problem.a_matrix), rel=1e-2)

    def test_deterministic(self):
        first, _ = phillips_problem(16)
        second, _ = phillips_problem(16)
        assert_array_equal(first.a_matrix, second.a_matrix)

    def test_exact_solution_shape(self, phillips32):
        _, exact = phillips32
        s = -6.0 + (np.arange(32) + 0.5) * 12.0 / 32
        assert np.all(exact >= 0.0)
        assert np.all(exact[np.abs(s) >= 3.0] == 0.0)
        assert exact.max() == pytest.approx(2.0, abs=0.05)

    @pytest.mark.parametrize("n", [4, 18, 0])
    def test_invalid_size(self, n):
        with pytest.raises(DomainError):
            phillips_problem(n)


class TestSpectrum:
    def test_flat_spectrum_is_well_conditioned(self):
        problem, _ = spectrum_problem(20, 5, 0.0, seed=1)
        assert condition_estimate(problem) == pytest.approx(1.0, rel=1e-10)

    def test_singular_values_follow_decay(self):
        problem, _ = spectrum_problem(30, 6, 4.0, seed=2)
        expected = 10.0 ** (-4.0 * np.arange(6) / 5)
        assert_allclose(np.linalg.svd(problem.a_matrix, compute_uv=False), expected, rtol=1e-8)

    def test_orthonormal_factors(self):
        u, v = orthonormal_factors(replicate_rng(3, 0), 12, 4)
        assert_allclose(u.T @ u, np.eye(4), atol=1e-12)
        assert_allclose(v.T @ v, np.eye(4), atol=1e-12)

    def test_seeded(self):
        first, exact_a = spectrum_problem(10, 4, 2.0, seed=5)
        second, exact_b = spectrum_problem(10, 4, 2.0, seed=5)
        other, _ = spectrum_problem(10, 4, 2.0, seed=6)
        assert_array_equal(first.a_matrix, second.a_matrix)
        assert_array_equal(exact_a, exact_b)
        assert not np.array_equal(first.a_matrix, other.a_matrix)

    def test_unit_norm_truth(self):
        _, exact = spectrum_problem(10, 4, 2.0, seed=5)
        assert np.linalg.norm(exact) == pytest.approx(1.0)

    @pytest.mark.parametrize("kwargs", [
        {"n": 3, "t": 4},
        {"n": 5, "t": 1},
        {"n": 5, "t": None},
        {"n": 5, "t": 3, "decay": -1.0},
        {"n": 5, "t": 3, "seed": -2},
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(DomainError):
            GeneratorSpec(kind=ProblemKind.SPECTRUM, **kwargs)


class TestGenerate:
    def test_dispatch(self):
        generated = generate(GeneratorSpec(kind="spectrum", n=8, t=3, seed=4))
        assert generated.problem.t == 3
        assert generated.spec.to_dict() == {"kind": "spectrum", "n": 8, "t": 3, "decay": 4.0, "seed": 4}

    def test_phillips_spec_fills_t(self):
        assert GeneratorSpec(kind="phillips", n=16).t == 16
        with pytest.raises(DomainError):
            GeneratorSpec(kind="phillips", n=16, t=8)


class TestSynthesize:
    def test_noise_free(self, phillips32):
        problem, exact = phillips32
        y, truth = synthesize_observations(problem, exact, 0.0, seed=1)
        assert_array_equal(y, truth.y_bar)
        assert_allclose(truth.y_bar, problem.a_matrix @ exact)

    def test_noise_variance(self):
        problem, exact = spectrum_problem(5, 3, 1.0, seed=0)
        noise = np.array([synthesize_observations(problem, exact, 0.01, seed=s)[0] - problem.a_matrix @ exact
                          for s in range(20000)])
        std_error = 0.01 * np.sqrt(2.0 / (noise.size - 1))
        assert abs(noise.var() - 0.01) < 5 * std_error

    def test_same_seed_same_draw(self, phillips32):
        problem, exact = phillips32
        first, _ = synthesize_observations(problem, exact, 1e-4, seed=42)
        second, _ = synthesize_observations(problem, exact, 1e-4, seed=42)
        assert_array_equal(first, second)

    def test_noise_stream_is_separate_from_design(self):
        problem, exact = spectrum_problem(20, 5, 2.0, seed=3)
        y, truth = synthesize_observations(problem, exact, 1.0, seed=3)
        noise = truth.epsilon(y)
        assert_allclose(noise, observation_rng(3).standard_normal(20), atol=1e-12)
        assert not np.allclose(noise, design_rng(3).standard_normal((20, 5)).ravel()[:20])
        assert not np.allclose(noise, replicate_rng(3, 0).standard_normal(20))

    def test_negative_sigma2(self, phillips32):
        problem, exact = phillips32
        with pytest.raises(DomainError):
            synthesize_observations(problem, exact, -1.0, seed=0)


class TestDefaultPrior:
    def test_modes(self, phillips32):
        problem, exact = phillips32
        true_prior = default_prior(problem, exact)
        zero_prior = default_prior(problem, exact, MuMode.ZERO)
        assert_array_equal(true_prior.mu, exact)
        assert_array_equal(true_prior.w_beta, np.eye(32))
        assert zero_prior.is_zero_mean
        assert zero_prior.mu_assumed_zero
        assert default_prior(problem, exact, "zero").is_zero_mean
