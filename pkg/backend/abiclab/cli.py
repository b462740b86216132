"""Command-line experiment runner.

    python -m abiclab generate --kind phillips --n 32 --sigma2 1e-4 --seed 42 --out run
    python -m abiclab select-kappa --problem run/problem.json --case 1 --out run/case1
    python -m abiclab bias-study --kind phillips --n 32 --study sigma2 --mu-mode zero

Settings resolve as dataclass defaults, then ``--config`` (a previous
config.json), then explicit flags. The resolved config is echoed into every
output so any run can be repeated from its config.json.
"""

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from abiclab import __version__
from abiclab.bias_lab import (
    DEFAULT_KAPPA_REPLICATES,
    DEFAULT_SIGMA2_REPLICATES,
    MIN_REPLICATES,
    mc_kappa_study,
    mc_sigma2_study,
    write_draws_csv,
)
from abiclab.errors import (
    AbicLabError,
    ConfigError,
    DomainError,
    NumericError,
    ProblemFileError,
    RankDeficiencyWarning,
    SingularMatrixError,
)
from abiclab.estimators import bayes_estimate, ls_estimate, regularized_estimate
from abiclab.marginal import MarginalEvaluator, kappa_sweep, log_kappa_grid, write_sweep_csv
from abiclab.model import (
    GroundTruth,
    Hyperparameters,
    InverseProblem,
    MuMode,
    PriorModel,
    ProblemFile,
    condition_estimate,
    load_problem_file,
    validate_problem,
)
from abiclab.problems import (
    DEFAULT_DECAY,
    GeneratorSpec,
    ProblemKind,
    default_prior,
    generate,
    synthesize_observations,
)
from abiclab.selection import DEFAULT_LOG10_BRACKET, DEFAULT_REL_TOL, GRID_POINTS, select
from abiclab.settings import configure_logging, describe_environment

logger = logging.getLogger(__name__)

COMMANDS = ("generate", "validate", "solve", "select-kappa", "sweep", "bias-study")
DEFAULT_NOISE_SIGMA2 = 1e-4


# --- Config ---
@dataclass
class ExperimentConfig:
    command: str
    problem: Optional[str] = None
    truth: Optional[str] = None
    kind: Optional[str] = None
    n: int = 32
    t: Optional[int] = None
    decay: float = DEFAULT_DECAY
    case: int = 1
    mu_mode: str = MuMode.TRUE.value
    sigma2: Optional[float] = None
    bracket: Tuple[float, float] = DEFAULT_LOG10_BRACKET
    rel_tol: float = DEFAULT_REL_TOL
    replicates: Optional[int] = None
    seed: int = 0
    out: str = "out"
    kappa: Optional[float] = None
    study: str = "sigma2"
    sampling: Optional[str] = None

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}", {"keys": unknown})
        if "command" not in data:
            raise ConfigError("Config has no command")
        values = dict(data)
        if values.get("bracket") is not None:
            values["bracket"] = tuple(float(x) for x in values["bracket"])
        return cls(**values)

    def resolve(self) -> "ExperimentConfig":
        """Check values and fill defaults that depend on other fields."""
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command '{self.command}'")
        if self.problem and self.kind:
            raise ConfigError("Give either --problem or --kind, not both")
        if self.command == "generate" and not self.kind:
            raise ConfigError("generate needs --kind")
        if not self.problem and not self.kind:
            raise ConfigError("Give --problem <path> or generator flags (--kind ...)")
        if self.kind and self.kind not in {k.value for k in ProblemKind}:
            raise ConfigError(f"Unknown problem kind '{self.kind}'")
        if self.case not in (1, 2):
            raise ConfigError(f"--case must be 1 or 2, got {self.case}")
        if self.mu_mode not in {m.value for m in MuMode}:
            raise ConfigError(f"--mu-mode must be 'true' or 'zero', got {self.mu_mode}")
        if self.study not in ("sigma2", "kappa"):
            raise ConfigError(f"--study must be 'sigma2' or 'kappa', got {self.study}")
        if self.sampling not in (None, "fixed", "prior"):
            raise ConfigError(f"--sampling must be 'fixed' or 'prior', got {self.sampling}")
        lo, hi = self.bracket
        if not lo < hi:
            raise ConfigError(f"--bracket lower bound must be below upper bound, got {lo} {hi}")
        if not self.rel_tol > 0:
            raise ConfigError(f"--rel-tol must be positive, got {self.rel_tol}")
        if self.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {self.seed}")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ConfigError(f"--sigma2 must be non-negative, got {self.sigma2}")
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigError(f"--kappa must be positive, got {self.kappa}")
        if self.kind and self.sigma2 is None:
            self.sigma2 = DEFAULT_NOISE_SIGMA2
        if self.command == "bias-study" and self.replicates is None:
            self.replicates = DEFAULT_SIGMA2_REPLICATES if self.study == "sigma2" else DEFAULT_KAPPA_REPLICATES
        if self.replicates is not None and self.replicates < MIN_REPLICATES:
            raise ConfigError(f"--replicates must be at least {MIN_REPLICATES}, got {self.replicates}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["bracket"] = list(self.bracket)
        return data


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="previous config.json to start from")
    common.add_argument("--problem", help="problem JSON file")
    common.add_argument("--truth", help="truth JSON sidecar (exact_solution) for a problem file")
    common.add_argument("--kind", choices=[k.value for k in ProblemKind], help="generate the problem instead")
    common.add_argument("--n", type=int)
    common.add_argument("--t", type=int)
    common.add_argument("--decay", type=float)
    common.add_argument("--case", type=int, choices=[1, 2])
    common.add_argument("--mu-mode", dest="mu_mode", choices=[m.value for m in MuMode])
    common.add_argument("--sigma2", type=float, help="known / generating noise variance")
    common.add_argument("--bracket", type=float, nargs=2, metavar=("LO", "HI"), help="log10 kappa range")
    common.add_argument("--rel-tol", dest="rel_tol", type=float)
    common.add_argument("--replicates", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--kappa", type=float, help="fixed kappa for solve / sigma2 study")
    common.add_argument("--study", choices=["sigma2", "kappa"])
    common.add_argument("--sampling", choices=["fixed", "prior"])

    parser = _Parser(prog="abiclab", description="ABIC regularization and prior-mean bias experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], argument_default=argparse.SUPPRESS)
    return parser


def _read_json(path) -> Dict[str, Any]:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ProblemFileError(f"Could not read {path}: {e}", {"path": str(path)})
    if not isinstance(data, dict):
        raise ProblemFileError(f"{path} must hold a JSON object", {"path": str(path)})
    return data


def parse_config(argv: Optional[Sequence[str]] = None) -> ExperimentConfig:
    flags = vars(build_parser().parse_args(argv))
    merged: Dict[str, Any] = {}
    config_path = flags.pop("config", None)
    if config_path:
        saved = _read_json(config_path)
        merged.update(saved.get("config", saved))
    merged.update(flags)
    return ExperimentConfig.from_mapping(merged).resolve()


# --- Inputs ---
@dataclass
class RunInputs:
    problem: InverseProblem
    prior: PriorModel
    truth: Optional[GroundTruth] = None
    sigma2: Optional[float] = None
    spec: Optional[GeneratorSpec] = None

    def prior_for(self, mu_mode: MuMode) -> PriorModel:
        return self.prior.with_zero_mean() if mu_mode is MuMode.ZERO else self.prior


def _generator_spec(config: ExperimentConfig) -> GeneratorSpec:
    try:
        return GeneratorSpec(kind=ProblemKind(config.kind), n=config.n, t=config.t,
                             decay=config.decay, seed=config.seed)
    except DomainError as e:
        raise ConfigError(e.message)


def load_inputs(config: ExperimentConfig) -> RunInputs:
    if config.kind:
        spec = _generator_spec(config)
        generated = generate(spec)
        y, truth = synthesize_observations(generated.problem, generated.exact_solution,
                                           config.sigma2, config.seed)
        problem = generated.problem.with_observations(y)
        prior = default_prior(problem, generated.exact_solution, MuMode.TRUE)
        return RunInputs(problem=problem, prior=prior, truth=truth, sigma2=config.sigma2, spec=spec)

    problem_file = load_problem_file(config.problem)
    problem, prior = problem_file.problem, problem_file.prior
    truth = None
    if config.truth:
        data = _read_json(config.truth)
        if "exact_solution" not in data:
            raise ProblemFileError(f"{config.truth} has no 'exact_solution'", {"path": config.truth})
        truth = GroundTruth.from_solution(problem, data["exact_solution"])
        if prior.mu_assumed_zero:
            prior = prior.with_mean(truth.beta_bar)
    sigma2 = config.sigma2 if config.sigma2 is not None else problem_file.sigma2
    return RunInputs(problem=problem, prior=prior, truth=truth, sigma2=sigma2)


def _require_sigma2(inputs: RunInputs, purpose: str) -> float:
    if inputs.sigma2 is None or not inputs.sigma2 > 0:
        raise ConfigError(f"{purpose} needs a positive sigma2 (--sigma2 or 'sigma2' in the problem file)")
    return inputs.sigma2


def _require_truth(inputs: RunInputs) -> GroundTruth:
    if inputs.truth is None:
        raise ConfigError("bias-study needs a ground truth (--kind or --truth)")
    return inputs.truth


def _search_options(config: ExperimentConfig) -> Dict[str, Any]:
    return {"log10_bracket": tuple(config.bracket), "rel_tol": config.rel_tol, "grid_points": GRID_POINTS}


# --- Output ---
def _plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    try:
        with open(path, "w") as f:
            json.dump(_plain(payload), f, indent=2, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise ProblemFileError(f"Could not write {path}: {e}", {"path": str(path)})
    logger.info(f"📝 Wrote {path}")
    return path


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ProblemFileError(f"Could not create output directory {out}: {e}", {"path": str(out)})
    return out


def _stamp(config: ExperimentConfig) -> Dict[str, Any]:
    return {"version": __version__, "config": config.to_dict()}


def _envelope(config: ExperimentConfig, mu_assumed_zero: bool, result: Dict[str, Any]) -> Dict[str, Any]:
    return {
        **_stamp(config),
        "mu_assumed_zero": mu_assumed_zero,
        "result": result,
    }


# --- Commands ---
def _run_generate(config: ExperimentConfig, out: Path) -> Tuple[Dict[str, Any], bool, Dict[str, Path]]:
    inputs = load_inputs(config)
    prior = inputs.prior_for(MuMode(config.mu_mode))
    problem_file = ProblemFile(problem=inputs.problem, prior=prior, sigma2=inputs.sigma2)
    files = {
        "problem": write_json(out / "problem.json", {**_stamp(config), **problem_file.to_dict()}),
        "truth": write_json(out / "truth.json", {
            **_stamp(config),
            **inputs.truth.to_dict(),
            "epsilon": inputs.truth.epsilon(inputs.problem.y),
            "generator_spec": inputs.spec.to_dict(),
        }),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        condition = condition_estimate(inputs.problem)
    result = {
        "generator_spec": inputs.spec.to_dict(),
        "n": inputs.problem.n,
        "t": inputs.problem.t,
        "sigma2": inputs.sigma2,
        "condition": condition,
        "problem_file": files["problem"].name,
        "truth_file": files["truth"].name,
    }
    return result, prior.mu_assumed_zero, files


def _run_validate(config: ExperimentConfig, out: Path):
    inputs = load_inputs(config)
    prior = inputs.prior_for(MuMode(config.mu_mode))
    report = validate_problem(inputs.problem, prior)
    result = {**report.to_dict(), "condition": condition_estimate(inputs.problem)}
    return result, prior.mu_assumed_zero, {}


def _solution_error(beta: np.ndarray, truth: Optional[GroundTruth]) -> Optional[float]:
    if truth is None:
        return None
    return float(np.linalg.norm(beta - truth.beta_bar) / np.linalg.norm(truth.beta_bar))


def _selected_kappa(config: ExperimentConfig, inputs: RunInputs, prior: PriorModel) -> Tuple[float, str]:
    """κ from --kappa, else the κ̂ of the configured case on this realization."""
    if config.kappa is not None:
        return config.kappa, "given"
    sigma2 = _require_sigma2(inputs, f"{config.command} --case 2") if config.case == 2 else None
    result = select(inputs.problem, prior, config.case, sigma2=sigma2, **_search_options(config))
    return result.kappa_hat, f"case{config.case}"


def _run_solve(config: ExperimentConfig, out: Path):
    inputs = load_inputs(config)
    prior = inputs.prior_for(MuMode(config.mu_mode))
    kappa, source = _selected_kappa(config, inputs, prior)
    if config.case == 2:
        sigma2 = _require_sigma2(inputs, "solve --case 2")
    else:
        sigma2 = MarginalEvaluator(inputs.problem, prior).terms(kappa)[0] / inputs.problem.n
    hyper = Hyperparameters.from_variances(sigma2, sigma2 / kappa)

    estimates: List[Dict[str, Any]] = []
    try:
        ls = ls_estimate(inputs.problem)
        estimates.append({**ls.to_dict(), "solution_error": _solution_error(ls.beta_hat, inputs.truth)})
    except SingularMatrixError as e:
        logger.warning(f"⚠️ LS estimate skipped: {e.message}")
        estimates.append({"method": "LS", "error": e.to_dict()})
    for estimate in (regularized_estimate(inputs.problem, prior.w_beta, kappa),
                     bayes_estimate(inputs.problem, prior, hyper.sigma2, hyper.sigma_beta2)):
        estimates.append({**estimate.to_dict(),
                          "solution_error": _solution_error(estimate.beta_hat, inputs.truth)})
    result = {
        "kappa": kappa,
        "kappa_source": source,
        "sigma2": hyper.sigma2,
        "sigma_beta2": hyper.sigma_beta2,
        "estimates": estimates,
    }
    return result, prior.mu_assumed_zero, {}


def _run_select(config: ExperimentConfig, out: Path):
    inputs = load_inputs(config)
    prior = inputs.prior_for(MuMode(config.mu_mode))
    sigma2 = _require_sigma2(inputs, "Case 2") if config.case == 2 else None
    result = select(inputs.problem, prior, config.case, sigma2=sigma2, **_search_options(config))
    files = {"sweep": write_sweep_csv(out / "sweep.csv", result.trace)}
    return result.to_dict(), result.mu_assumed_zero, files


def _run_sweep(config: ExperimentConfig, out: Path):
    inputs = load_inputs(config)
    prior = inputs.prior_for(MuMode(config.mu_mode))
    sigma2 = _require_sigma2(inputs, "Case 2") if config.case == 2 else None
    kappas = log_kappa_grid(tuple(config.bracket), GRID_POINTS)
    values = kappa_sweep(inputs.problem, prior, kappas, case=config.case, sigma2=sigma2)
    files = {"sweep": write_sweep_csv(out / "sweep.csv", values)}
    best = min(values, key=lambda v: v.total)
    result = {"case": best.case_tag.value, "points": len(values), "grid_minimum": best.to_dict()}
    return result, prior.mu_assumed_zero, files


def _run_bias_study(config: ExperimentConfig, out: Path):
    inputs = load_inputs(config)
    truth = _require_truth(inputs)
    sigma2 = _require_sigma2(inputs, "bias-study")
    mu_mode = MuMode(config.mu_mode)
    files: Dict[str, Path] = {}
    if config.study == "sigma2":
        kappa, _ = _selected_kappa(config, inputs, inputs.prior_for(mu_mode))
        report = mc_sigma2_study(inputs.problem, truth, inputs.prior, sigma2, kappa,
                                 replicates=config.replicates, seed=config.seed, mu_mode=mu_mode,
                                 sampling=config.sampling)
        return report.to_dict(), inputs.prior_for(mu_mode).mu_assumed_zero, files

    report = mc_kappa_study(inputs.problem, truth, inputs.prior, sigma2, replicates=config.replicates,
                            seed=config.seed, case=config.case, sampling=config.sampling or "fixed",
                            **_search_options(config))
    files["draws_true_mu"] = write_draws_csv(out / "draws_true_mu.csv", report.true_mu)
    files["draws_zero_mu"] = write_draws_csv(out / "draws_zero_mu.csv", report.zero_mu)
    return report.to_dict(), inputs.prior.mu_assumed_zero, files


RUNNERS = {
    "generate": _run_generate,
    "validate": _run_validate,
    "solve": _run_solve,
    "select-kappa": _run_select,
    "sweep": _run_sweep,
    "bias-study": _run_bias_study,
}


def run_experiment(config: ExperimentConfig) -> Dict[str, Path]:
    """Run one command and write result.json and config.json into ``config.out``."""
    out = _out_dir(config)
    logger.info(f"🔄 Running {config.command}")
    try:
        result, mu_assumed_zero, files = RUNNERS[config.command](config, out)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"Linear algebra failure: {e}")
    if mu_assumed_zero:
        logger.info("ℹ️ Prior mean assumed zero for this run")
    files["result"] = write_json(out / "result.json", _envelope(config, mu_assumed_zero, result))
    files["config"] = write_json(out / "config.json", {
        **_stamp(config),
        "mu_assumed_zero": mu_assumed_zero,
        "environment": describe_environment(),
    })
    if config.command == "validate" and not result["passed"]:
        failed = [c["name"] for c in result["checks"] if not c["passed"]]
        raise NumericError(f"Validation failed: {', '.join(failed)}", {"failed": failed})
    logger.info(f"✅ {config.command} finished")
    return files


def report_error(error: AbicLabError, out: Optional[str]) -> None:
    payload = json.dumps(_plain({**error.to_dict(), "version": __version__}), allow_nan=False)
    print(payload, file=sys.stderr)
    logger.error(f"❌ {error.error_code}: {error.message}")
    if out is None:
        return
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "error.json").write_text(payload + "\n")
    except OSError:
        logger.debug(f"Could not write error.json into {out}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    try:
        config = parse_config(argv)
    except AbicLabError as e:
        report_error(e, None)
        return e.exit_code
    try:
        run_experiment(config)
    except AbicLabError as e:
        report_error(e, config.out)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
