"""
Experiment orchestration: resolve a configuration, compute the Riccati
oracle, run the requested solver/optimizer/learner for every seed and write
the artifacts (trace CSVs, summary, oracle gains).
"""
import csv
import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, MGFOverflow, NumericalError, UnstablePolicy
from .model_file import load_policy, parse_model
from .models import (
    ExperimentConfig,
    ExperimentResult,
    InitPolicy,
    Mode,
    Policy,
    RunTrace,
    SeedOutcome,
    TeamModel,
)
from .policy_gradient import evaluate, run
from .presets import GENERIC_DEFAULTS, preset_defaults, preset_model
from .riccati import RiccatiSolution, optimal_policy, solve_team
from .seeding import STREAM_INIT_POLICY, derive_seed
from .simulator import estimate_risk_neutral, estimate_risk_sensitive, export_trajectory_csv, rollout
from .zeroth_order import learn, sample_sphere

logger = logging.getLogger(__name__)

MAX_INIT_ATTEMPTS = 1000
TRACE_COLUMNS = ["iter", "J", "gap", "grad_norm", "gain_err"]
ZO_TRACE_COLUMNS = TRACE_COLUMNS + ["rejected_samples", "estimate_stderr"]


def load_model(cfg: ExperimentConfig) -> TeamModel:
    if cfg.preset is not None:
        return preset_model(cfg.preset)
    return parse_model(cfg.model_path)


def resolve_config(cfg: ExperimentConfig) -> tuple[TeamModel, ExperimentConfig]:
    """
    Load the model and fill every unset experiment parameter.

    Explicit settings win over preset defaults, which win over the generic
    defaults. The returned model carries the effective risk factor.

    Raises:
        ConfigError: a zeroth-order mode with lambda > 0 or odd antithetic samples_L, or a missing parameter
    """
    model = load_model(cfg)
    defaults = preset_defaults(cfg.preset) if cfg.preset is not None else GENERIC_DEFAULTS
    updates = {
        name: getattr(defaults, name)
        for name in ("mode", "eta", "iters", "samples_L", "rollout_T", "radius_r", "seeds_count",
                     "init_policy", "init_mode", "init_radius", "antithetic", "backtracking")
        if getattr(cfg, name) is None
    }
    lam = model.risk_factor if cfg.risk_factor is None else cfg.risk_factor
    updates["risk_factor"] = lam
    resolved = cfg.model_copy(update=updates)
    model = model.with_risk_factor(lam)

    if resolved.mode.is_zeroth_order and lam > 0:
        raise ConfigError(f"mode {resolved.mode.value} is risk-neutral only; got lambda={lam}", field="lambda")
    required = {
        Mode.PG: ("eta", "iters"),
        Mode.NPG: ("eta", "iters"),
        Mode.ZO_PG: ("eta", "iters", "samples_L", "rollout_T", "radius_r"),
        Mode.ZO_NPG: ("eta", "iters", "samples_L", "rollout_T", "radius_r"),
        Mode.SIMULATE: ("rollout_T",),
        Mode.RICCATI: (),
    }[resolved.mode]
    for name in required:
        if getattr(resolved, name) is None:
            raise ConfigError(f"mode {resolved.mode.value} needs {name}", field=name)
    if resolved.mode.is_zeroth_order and resolved.antithetic and resolved.samples_L % 2:
        raise ConfigError(
            f"antithetic pairing needs an even sample count, got samples_L={resolved.samples_L}",
            field="samples_L",
        )
    if resolved.init_policy == InitPolicy.FILE and not resolved.policy_file:
        raise ConfigError("init_policy=file requires a policy file", field="policy_file")
    return model, resolved


def random_stable_policy(m: TeamModel, center: Policy, radius: float, seed: int) -> Policy:
    """
    Draw every gain block on a Frobenius sphere of `radius` around `center`,
    redrawing until the policy is stable (and risk-feasible when lambda > 0).
    """
    dims = [b.shape for b in center.blocks()]
    for attempt in range(MAX_INIT_ATTEMPTS):
        offsets = sample_sphere(dims, radius, derive_seed(seed, STREAM_INIT_POLICY, attempt))
        candidate = Policy.from_blocks([c + d for c, d in zip(center.blocks(), offsets)])
        try:
            evaluate(m, candidate)
        except NumericalError:
            continue
        logger.debug("random initial policy accepted after %d redraw(s)", attempt)
        return candidate
    raise UnstablePolicy(f"no stable policy found within radius {radius} after {MAX_INIT_ATTEMPTS} draws")


def initial_policy(m: TeamModel, cfg: ExperimentConfig, oracle: Optional[Policy], seed: int) -> Policy:
    if cfg.init_policy == InitPolicy.FILE:
        p = load_policy(cfg.policy_file)
        p.check_shapes(m)
        return p
    if cfg.init_policy == InitPolicy.RANDOM:
        if oracle is None:
            raise ConfigError("init_policy=random needs the Riccati oracle, which is unavailable", field="init_policy")
        return random_stable_policy(m, oracle, cfg.init_radius, seed)
    return Policy.zeros(m)


def write_trace_csv(trace: RunTrace, path: Path, zeroth_order: bool = False) -> Path:
    columns = ZO_TRACE_COLUMNS if zeroth_order else TRACE_COLUMNS
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in trace.rows:
            values = [row.iteration, row.cost, row.gap, row.grad_norm, row.gain_err]
            if zeroth_order:
                values += [row.rejected_samples, row.estimate_stderr]
            writer.writerow(["" if v is None else v for v in values])
    return path


def write_oracle_csv(oracle: Policy, path: Path) -> Path:
    """One row per gain entry: block, row, col, value (u = theta x convention)."""
    names = [f"theta[{s}]" for s in range(len(oracle.theta))] + ["theta_bar"]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["block", "row", "col", "value"])
        for name, block in zip(names, oracle.blocks()):
            for (i, j), value in np.ndenumerate(block):
                writer.writerow([name, i, j, float(value)])
    return path


def format_summary(result: ExperimentResult) -> str:
    lines = ["=" * 80, "EXPERIMENT SUMMARY", "=" * 80,
             f"mode: {result.mode.value}",
             f"lambda: {result.risk_factor:g}",
             f"wall time: {result.wall_time:.3f} s",
             f"exit code: {result.exit_code}"]
    if result.oracle is not None:
        lines.append(f"oracle cost J*: {result.oracle_cost:.12g}")
        for s, gain in enumerate(result.oracle.theta):
            lines.append(f"theta*[{s}]: {np.array2string(gain, precision=10)}")
        lines.append(f"theta_bar*: {np.array2string(result.oracle.theta_bar, precision=10)}")
    lines += ["", "seed  final_J  gain_err  initial_gain_err  iterations  halted"]
    for o in result.outcomes:
        lines.append(
            f"{o.seed}  {_fmt(o.final_cost)}  {_fmt(o.gain_error)}  {_fmt(o.initial_gain_error)}  "
            f"{o.iterations}  {o.halted_reason or '-'}"
        )
    if result.message:
        lines += ["", result.message]
    lines.append("=" * 80)
    return "\n".join(lines) + "\n"


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.8g}"


def _solve_oracle(m: TeamModel, required: bool) -> tuple[Optional[RiccatiSolution], Optional[Policy]]:
    try:
        solution = solve_team(m)
    except NumericalError as exc:
        if required:
            raise
        logger.warning("Riccati oracle unavailable: %s", exc)
        return None, None
    return solution, optimal_policy(solution)


def _outcome_from_trace(trace: RunTrace, seed: int, p0: Policy, oracle: Optional[Policy]) -> SeedOutcome:
    last = trace.rows[-1] if trace.rows else None
    return SeedOutcome(
        seed=seed,
        final_cost=last.cost if last else None,
        gain_error=None if oracle is None else trace.final_policy.distance(oracle),
        initial_gain_error=None if oracle is None else p0.distance(oracle),
        iterations=trace.iterations,
        halted_reason=trace.halted_reason,
        trace=trace,
    )


def _simulate(m: TeamModel, cfg: ExperimentConfig, policy: Policy, seeds: list[int]) -> tuple[list[SeedOutcome], str]:
    outcomes = []
    for seed in seeds:
        traj = rollout(m, policy, cfg.rollout_T, seed, init_mode=cfg.init_mode)
        outcomes.append(SeedOutcome(seed=seed, final_cost=float(np.mean(traj.costs))))
    estimate = estimate_risk_neutral(m, policy, cfg.rollout_T, seeds, init_mode=cfg.init_mode)
    message = f"estimated average cost {estimate.value:.8g} +/- {estimate.stderr:.2g} over {len(seeds)} seed(s)"
    if m.risk_factor > 0:
        try:
            risk = estimate_risk_sensitive(m, policy, cfg.rollout_T, seeds, m.risk_factor, init_mode=cfg.init_mode)
            message += (f"; risk-sensitive estimate {risk.value:.8g} +/- {risk.stderr:.2g}"
                        f" (mean-variance approximation {risk.approximation:.8g})")
        except MGFOverflow as exc:
            logger.warning("risk-sensitive estimate skipped: %s", exc)
    return outcomes, message


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Run one experiment end to end.

    Seeds are cfg.seed, cfg.seed + 1, ... (seeds_count of them). Artifacts
    are written only when cfg.out is set. The result's exit_code is 3 when
    any run halted on an unstable or infeasible iterate.

    Raises:
        ConfigError, ModelError, NumericalError: propagated from the modules
    """
    started = time.perf_counter()
    m, cfg = resolve_config(cfg)
    mode = cfg.mode
    logger.info("experiment: mode=%s lambda=%g seeds=%d", mode.value, m.risk_factor, cfg.seeds_count)

    solution, oracle = _solve_oracle(m, required=(mode == Mode.RICCATI))
    oracle_cost = evaluate(m, oracle).cost if oracle is not None else None
    seeds = [cfg.seed + k for k in range(cfg.seeds_count)]
    outcomes: list[SeedOutcome] = []
    message = ""
    final_policies: dict[int, Policy] = {}

    if mode == Mode.RICCATI:
        outcomes.append(SeedOutcome(seed=cfg.seed, final_cost=oracle_cost, gain_error=0.0,
                                    iterations=solution.iterations))
        final_policies[cfg.seed] = oracle
        message = f"Riccati residual {solution.residual:.3g} after {solution.iterations} iterations"
    elif mode == Mode.SIMULATE:
        policy = load_policy(cfg.policy_file) if cfg.init_policy == InitPolicy.FILE else oracle
        if policy is None:
            raise ConfigError("simulate needs a policy file when the Riccati oracle is unavailable",
                              field="policy_file")
        policy.check_shapes(m)
        outcomes, message = _simulate(m, cfg, policy, seeds)
        final_policies = {seed: policy for seed in seeds}
    else:
        for seed in seeds:
            p0 = initial_policy(m, cfg, oracle, seed)
            if mode.is_zeroth_order:
                trace = learn(m, p0, mode.algo, cfg.eta, cfg.samples_L, cfg.rollout_T, cfg.radius_r,
                              cfg.iters, seed, antithetic=cfg.antithetic, init_mode=cfg.init_mode, oracle=oracle)
            else:
                trace = run(m, p0, mode.algo, cfg.eta, cfg.iters, cfg.tol,
                            backtracking=cfg.backtracking, oracle=oracle)
                trace.seed = seed
            outcome = _outcome_from_trace(trace, seed, p0, oracle)
            outcomes.append(outcome)
            final_policies[seed] = trace.final_policy
            logger.info("seed %d: final J=%s gain_err=%s iterations=%d",
                        seed, _fmt(outcome.final_cost), _fmt(outcome.gain_error), outcome.iterations)

    halted = [o for o in outcomes if o.halted_reason and o.halted_reason.startswith("UnstableIterate")]
    result = ExperimentResult(
        mode=mode,
        risk_factor=m.risk_factor,
        oracle=oracle,
        oracle_cost=oracle_cost,
        outcomes=outcomes,
        exit_code=3 if halted else 0,
        message=message if not halted else f"{len(halted)} run(s) halted on an unstable iterate",
    )
    if cfg.out:
        result.artifacts = _write_artifacts(m, cfg, result, final_policies)
    result.wall_time = time.perf_counter() - started
    if cfg.out:
        (Path(cfg.out) / "summary.txt").write_text(format_summary(result))
    return result


def _write_artifacts(m: TeamModel, cfg: ExperimentConfig, result: ExperimentResult,
                     final_policies: dict[int, Policy]) -> list[str]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for outcome in result.outcomes:
        if outcome.trace is not None:
            path = out / f"trace_{outcome.seed}.csv"
            write_trace_csv(outcome.trace, path, zeroth_order=cfg.mode.is_zeroth_order)
            written.append(str(path))
    if result.oracle is not None:
        written.append(str(write_oracle_csv(result.oracle, out / "oracle_gains.csv")))
    if cfg.export_trajectory:
        for seed, policy in final_policies.items():
            traj = rollout(m, policy, cfg.rollout_T, seed, init_mode=cfg.init_mode)
            written.append(str(export_trajectory_csv(traj, m, out / f"trajectory_{seed}.csv")))
    written.append(str(out / "summary.txt"))
    return written
