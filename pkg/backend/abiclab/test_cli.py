import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from abiclab import __version__
from abiclab.cli import ExperimentConfig, main, parse_config
from abiclab.errors import ConfigError
from abiclab.model import PriorModel
from abiclab.problems import GeneratorSpec, ProblemKind, generate, synthesize_observations
from abiclab.selection import GRID_POINTS, select_case1, select_case2


def _result(out):
    return json.loads((out / "result.json").read_text())["result"]


class TestConfig:
    def test_generator_defaults(self):
        config = parse_config(["select-kappa", "--kind", "phillips"])
        assert config.sigma2 == 1e-4
        assert config.n == 32
        assert config.bracket == (-12.0, 12.0)

    def test_bias_study_replicate_defaults(self):
        assert parse_config(["bias-study", "--kind", "phillips"]).replicates == 20000
        assert parse_config(["bias-study", "--kind", "phillips", "--study", "kappa"]).replicates == 500

    def test_flags_override_saved_config(self, tmp_path):
        saved = tmp_path / "config.json"
        saved.write_text(json.dumps({"config": {"command": "sweep", "kind": "phillips", "n": 16, "case": 2}}))
        config = parse_config(["sweep", "--config", str(saved), "--n", "24"])
        assert config.n == 24
        assert config.case == 2

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"command": "sweep", "colour": "red"})

    @pytest.mark.parametrize("argv", [
        ["select-kappa"],
        ["select-kappa", "--kind", "phillips", "--problem", "p.json"],
        ["select-kappa", "--kind", "phillips", "--bracket", "3", "1"],
        ["bias-study", "--kind", "phillips", "--replicates", "10"],
        ["fit", "--kind", "phillips"],
    ])
    def test_invalid_arguments(self, argv):
        with pytest.raises(ConfigError):
            parse_config(argv)


class TestCommands:
    def test_generate_then_select(self, tmp_path):
        run = tmp_path / "run"
        assert main(["generate", "--kind", "phillips", "--n", "16", "--seed", "3", "--out", str(run)]) == 0
        assert (run / "problem.json").exists()
        truth = json.loads((run / "truth.json").read_text())
        assert len(truth["exact_solution"]) == 16

        out = tmp_path / "case1"
        assert main(["select-kappa", "--problem", str(run / "problem.json"), "--out", str(out)]) == 0
        result = _result(out)
        assert {"kappa_hat", "sigma2_hat", "sigma_beta2_hat", "boundary_flag", "trace"} <= set(result)
        assert result["case"] == "Case1"
        header = (out / "sweep.csv").read_text().splitlines()[0]
        assert header == "kappa,quad_term,logdet_term,objective,case"

    def test_zero_mean_selection_matches_library(self, tmp_path):
        out = tmp_path / "e2e"
        code = main(["select-kappa", "--kind", "phillips", "--n", "32", "--sigma2", "1e-4", "--seed", "42",
                     "--case", "1", "--mu-mode", "zero", "--out", str(out)])
        assert code == 0
        envelope = json.loads((out / "result.json").read_text())
        assert envelope["result"]["case"] == "Case1ZeroMean"

        generated = generate(GeneratorSpec(kind=ProblemKind.PHILLIPS, n=32))
        y, _ = synthesize_observations(generated.problem, generated.exact_solution, 1e-4, 42)
        expected = select_case1(generated.problem.with_observations(y), PriorModel.create(32))
        assert envelope["result"]["sigma2_hat"] == pytest.approx(expected.sigma2_hat, rel=1e-12)
        assert envelope["result"]["kappa_hat"] == pytest.approx(expected.kappa_hat, rel=1e-12)

    def test_rerun_from_config_is_identical(self, tmp_path):
        out = tmp_path / "first"
        main(["select-kappa", "--kind", "phillips", "--n", "16", "--seed", "7", "--out", str(out)])
        before = (out / "result.json").read_bytes()
        assert main(["select-kappa", "--config", str(out / "config.json")]) == 0
        assert (out / "result.json").read_bytes() == before

    def test_config_records_environment(self, tmp_path):
        out = tmp_path / "run"
        main(["validate", "--kind", "phillips", "--n", "16", "--out", str(out)])
        saved = json.loads((out / "config.json").read_text())
        assert saved["config"]["command"] == "validate"
        assert "ABICLAB_LOG_LEVEL" in saved["environment"]

    def test_solve(self, tmp_path):
        out = tmp_path / "solve"
        assert main(["solve", "--kind", "phillips", "--n", "16", "--out", str(out)]) == 0
        result = _result(out)
        assert result["kappa_source"] == "case1"
        assert [e["method"] for e in result["estimates"]] == ["LS", "Regularized", "Bayes"]

    def test_solve_case2_selects_with_known_sigma2(self, tmp_path):
        out = tmp_path / "solve2"
        code = main(["solve", "--kind", "phillips", "--n", "32", "--sigma2", "1e-4", "--seed", "42",
                     "--case", "2", "--mu-mode", "zero", "--out", str(out)])
        assert code == 0
        result = _result(out)

        generated = generate(GeneratorSpec(kind=ProblemKind.PHILLIPS, n=32))
        y, _ = synthesize_observations(generated.problem, generated.exact_solution, 1e-4, 42)
        expected = select_case2(generated.problem.with_observations(y), PriorModel.create(32), 1e-4)
        assert result["kappa_source"] == "case2"
        assert result["kappa"] == pytest.approx(expected.kappa_hat, rel=1e-12)
        assert result["sigma2"] == 1e-4
        assert result["sigma_beta2"] == pytest.approx(1e-4 / expected.kappa_hat, rel=1e-12)

    def test_generate_sidecars_carry_version_and_config(self, tmp_path):
        run = tmp_path / "run"
        assert main(["generate", "--kind", "spectrum", "--n", "12", "--t", "4", "--seed", "5",
                     "--out", str(run)]) == 0
        problem = json.loads((run / "problem.json").read_text())
        truth = json.loads((run / "truth.json").read_text())
        for data in (problem, truth):
            assert data["version"] == __version__
            assert data["config"]["seed"] == 5
        assert_allclose(truth["epsilon"], np.array(problem["y"]) - np.array(truth["y_bar"]),
                        rtol=1e-12, atol=1e-15)

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--kind", "phillips", "--n", "16", "--case", "2", "--out", str(out)]) == 0
        assert len((out / "sweep.csv").read_text().splitlines()) == GRID_POINTS + 1
        assert _result(out)["points"] == GRID_POINTS

    def test_sigma2_bias_study(self, tmp_path):
        out = tmp_path / "bias"
        code = main(["bias-study", "--kind", "phillips", "--n", "16", "--study", "sigma2",
                     "--mu-mode", "zero", "--replicates", "200", "--out", str(out)])
        assert code == 0
        result = _result(out)
        assert result["study"] == "sigma2"
        assert result["sampling"] == "fixed"
        assert json.loads((out / "result.json").read_text())["mu_assumed_zero"] is True

    def test_kappa_bias_study(self, tmp_path):
        out = tmp_path / "kappa"
        code = main(["bias-study", "--kind", "phillips", "--n", "16", "--study", "kappa",
                     "--replicates", "100", "--rel-tol", "1e-3", "--bracket", "-6", "6", "--out", str(out)])
        assert code == 0
        assert len((out / "draws_true_mu.csv").read_text().splitlines()) == 101
        assert len((out / "draws_zero_mu.csv").read_text().splitlines()) == 101
        assert _result(out)["study"] == "kappa"


class TestExitCodes:
    def test_config_error(self, capsys):
        assert main(["select-kappa"]) == 2
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error_code"] == "config_error"

    def test_missing_problem_file(self, tmp_path):
        out = tmp_path / "missing"
        assert main(["select-kappa", "--problem", str(tmp_path / "absent.json"), "--out", str(out)]) == 4
        error = json.loads((out / "error.json").read_text())
        assert error["error_code"] == "io_error"
        assert error["version"] == __version__

    def test_degenerate_residual(self, tmp_path):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({"A": [[1.0], [1.0]], "y": [1.0, 1.0], "mu": [1.0]}))
        out = tmp_path / "degenerate"
        assert main(["select-kappa", "--problem", str(problem), "--out", str(out)]) == 3
        assert (out / "error.json").exists()

    def test_failed_validation(self, tmp_path):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({"A": [[1.0, 0.0], [0.0, 1.0]], "y": [1.0, 1.0],
                                       "W": [[1.0, 2.0], [0.0, 1.0]]}))
        out = tmp_path / "validate"
        assert main(["validate", "--problem", str(problem), "--out", str(out)]) == 3
        assert _result(out)["passed"] is False
