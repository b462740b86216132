import math

import numpy as np
import pytest

from abiclab.errors import DomainError, EvaluationError
from abiclab.marginal import CaseTag, MarginalEvaluator
from abiclab.model import InverseProblem, PriorModel
from abiclab.problems import synthesize_observations
from abiclab.selection import (
    GRID_POINTS,
    BoundaryFlag,
    minimize_scalar,
    select,
    select_case1,
    select_case2,
)

NOISE = 1e-4


@pytest.fixture(scope="module")
def noisy_phillips(phillips32):
    problem, exact = phillips32
    y, _ = synthesize_observations(problem, exact, NOISE, seed=42)
    return problem.with_observations(y), exact


class TestMinimizeScalar:
    def test_quadratic_in_log_kappa(self):
        result = minimize_scalar(lambda k: (math.log10(k) - 1.0) ** 2)
        assert result.kappa_hat == pytest.approx(10.0, rel=1e-5)
        assert result.boundary_flag is BoundaryFlag.INTERIOR
        assert len(result.trace) == GRID_POINTS

    def test_off_grid_minimum(self):
        result = minimize_scalar(lambda k: (math.log10(k) - 0.3) ** 2, rel_tol=1e-8)
        assert result.kappa_hat == pytest.approx(10.0 ** 0.3, rel=1e-6)

    def test_increasing_objective_flags_lower_edge(self):
        result = minimize_scalar(lambda k: k)
        assert result.boundary_flag is BoundaryFlag.LOWER_EDGE
        assert result.kappa_hat == pytest.approx(1e-12)

    def test_decreasing_objective_flags_upper_edge(self):
        result = minimize_scalar(lambda k: -math.log(k), log10_bracket=(-3.0, 3.0))
        assert result.boundary_flag is BoundaryFlag.UPPER_EDGE
        assert result.kappa_hat == pytest.approx(1e3)

    def test_ties_go_to_smaller_kappa(self):
        result = minimize_scalar(lambda k: 1.0)
        assert result.boundary_flag is BoundaryFlag.LOWER_EDGE

    def test_sparse_failures_are_skipped(self):
        def objective(k):
            x = math.log10(k)
            return math.nan if x > 8.0 else (x + 2.0) ** 2

        result = minimize_scalar(objective)
        assert result.kappa_hat == pytest.approx(1e-2, rel=1e-5)

    def test_mostly_non_finite_raises(self):
        with pytest.raises(EvaluationError):
            minimize_scalar(lambda k: math.nan if k > 1e-6 else 1.0)

    @pytest.mark.parametrize("bracket, rel_tol, points", [
        ((1.0, -1.0), 1e-6, 97),
        ((-1.0, 1.0), 0.0, 97),
        ((-1.0, 1.0), 1e-6, 2),
    ])
    def test_invalid_search_settings(self, bracket, rel_tol, points):
        with pytest.raises(DomainError):
            minimize_scalar(lambda k: k, bracket, rel_tol, points)


class TestSelectCase1:
    def test_matches_fine_grid(self, noisy_phillips):
        problem, _ = noisy_phillips
        prior = PriorModel.create(problem.t)
        result = select_case1(problem, prior)
        assert result.boundary_flag is BoundaryFlag.INTERIOR

        evaluator = MarginalEvaluator(problem, prior)
        center = math.log10(result.kappa_hat)
        kappas = np.power(10.0, np.linspace(center - 1.0, center + 1.0, 20001))
        totals = [evaluator.case1(k).total for k in kappas]
        brute = kappas[int(np.argmin(totals))]
        assert result.kappa_hat == pytest.approx(brute, rel=1e-3)
        assert result.objective_at_min <= min(totals) + 1e-9 * abs(min(totals))

    def test_variances_are_consistent(self, noisy_phillips):
        problem, _ = noisy_phillips
        result = select_case1(problem, PriorModel.create(problem.t))
        assert result.sigma_beta2_hat * result.kappa_hat == pytest.approx(result.sigma2_hat, rel=1e-14)
        assert result.case is CaseTag.CASE1_ZERO_MEAN
        assert result.mu_assumed_zero is True
        assert result.sigma2 == result.sigma2_hat

    def test_trace_holds_finite_grid_values(self, noisy_phillips):
        problem, _ = noisy_phillips
        result = select_case1(problem, PriorModel.create(problem.t))
        assert GRID_POINTS // 2 < len(result.trace) <= GRID_POINTS
        assert all(math.isfinite(v.total) for v in result.trace)
        data = result.to_dict()
        assert data["boundary_flag"] == "Interior"
        assert len(data["trace"]) == len(result.trace)

    def test_trace_terms_move_in_opposite_directions(self, random_fixture):
        problem, prior = random_fixture(60, n=80, t=4)
        result = select_case1(problem, prior)
        kappas = [v.kappa for v in result.trace]
        quads = [v.quad_term for v in result.trace]
        logdets = [v.logdet_term for v in result.trace]
        assert kappas == sorted(kappas)
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(quads, quads[1:]))
        assert all(b <= a + 1e-9 * abs(a) + 1e-12 for a, b in zip(logdets, logdets[1:]))

    def test_calibration_with_true_mean(self, phillips32):
        problem, exact = phillips32
        prior = PriorModel.create(problem.t, mu=exact)
        estimates = []
        for seed in range(100):
            y, _ = synthesize_observations(problem, exact, NOISE, seed=seed)
            estimates.append(select_case1(problem.with_observations(y), prior, rel_tol=1e-4).sigma2_hat)
        estimates = np.array(estimates)
        assert estimates.mean() == pytest.approx(NOISE, rel=0.2)
        assert np.sum((estimates > NOISE / 2) & (estimates < NOISE * 2)) >= 90

    def test_deterministic(self, noisy_phillips):
        problem, _ = noisy_phillips
        prior = PriorModel.create(problem.t)
        first = select_case1(problem, prior)
        second = select_case1(problem, prior)
        assert first.kappa_hat == second.kappa_hat
        assert first.sigma2_hat == second.sigma2_hat


class TestSelectCase2:
    def test_matches_fine_grid(self, noisy_phillips):
        problem, _ = noisy_phillips
        prior = PriorModel.create(problem.t)
        result = select_case2(problem, prior, NOISE)
        assert result.boundary_flag is BoundaryFlag.INTERIOR

        evaluator = MarginalEvaluator(problem, prior)
        center = math.log10(result.kappa_hat)
        kappas = np.power(10.0, np.linspace(center - 1.0, center + 1.0, 20001))
        totals = [evaluator.case2(NOISE, k).total for k in kappas]
        brute = kappas[int(np.argmin(totals))]
        assert result.kappa_hat == pytest.approx(brute, rel=1e-3)
        assert result.objective_at_min <= min(totals) + 1e-9 * abs(min(totals))

    def test_local_minimum(self, noisy_phillips):
        problem, _ = noisy_phillips
        prior = PriorModel.create(problem.t)
        result = select_case2(problem, prior, NOISE)
        evaluator = MarginalEvaluator(problem, prior)
        if result.boundary_flag is BoundaryFlag.INTERIOR:
            for factor in (0.99, 1.01):
                assert evaluator.case2(NOISE, result.kappa_hat * factor).total >= result.objective_at_min
        assert result.sigma_beta2_hat == pytest.approx(NOISE / result.kappa_hat, rel=1e-14)
        assert result.sigma2_given == NOISE
        assert result.sigma2_hat is None

    def test_exact_prior_mean_drives_kappa_up(self):
        problem = InverseProblem.create([[1.0], [1.0]], y=[1.0, 1.0])
        prior = PriorModel.create(1, mu=[1.0])
        result = select_case2(problem, prior, 1.0)
        assert result.boundary_flag is BoundaryFlag.UPPER_EDGE
        assert result.is_boundary

    def test_scale_consistency(self, random_fixture):
        problem, prior = random_fixture(7, n=20, t=4)
        base = select_case2(problem, prior, 0.5, rel_tol=1e-9)
        scaled_problem = problem.with_observations(problem.y * 3.0)
        scaled_prior = prior.with_mean(prior.mu * 3.0)
        scaled = select_case2(scaled_problem, scaled_prior, 0.5 * 9.0, rel_tol=1e-9)
        assert scaled.kappa_hat == pytest.approx(base.kappa_hat, rel=1e-5)

    def test_prior_weight_scaling_divides_kappa(self, random_fixture):
        problem, prior = random_fixture(7, n=20, t=4)
        base = select_case2(problem, prior, 0.5, rel_tol=1e-9)
        scaled_prior = PriorModel.create(problem.t, mu=prior.mu, w_beta=prior.w_beta * 100.0)
        scaled = select_case2(problem, scaled_prior, 0.5, rel_tol=1e-9)
        assert base.boundary_flag is BoundaryFlag.INTERIOR
        assert scaled.kappa_hat == pytest.approx(base.kappa_hat / 100.0, rel=1e-5)

    def test_larger_sigma2_never_lowers_kappa(self, noisy_phillips):
        problem, _ = noisy_phillips
        prior = PriorModel.create(problem.t)
        kappas = [select_case2(problem, prior, s2).kappa_hat for s2 in (1e-5, 1e-4, 1e-3)]
        assert kappas[0] <= kappas[1] * (1 + 1e-4)
        assert kappas[1] <= kappas[2] * (1 + 1e-4)


class TestSelect:
    def test_dispatch(self, pair_problem, zero_prior_1d):
        assert select(pair_problem, zero_prior_1d, 2, sigma2=1.0).case is CaseTag.CASE2_ZERO_MEAN

    def test_case2_without_sigma2(self, pair_problem, zero_prior_1d):
        with pytest.raises(DomainError):
            select(pair_problem, zero_prior_1d, 2)

    def test_unknown_case(self, pair_problem, zero_prior_1d):
        with pytest.raises(DomainError):
            select(pair_problem, zero_prior_1d, 3)
