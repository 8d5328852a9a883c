"""
Model-free learning of the risk-neutral team optimum.

Gradients are estimated from simulated rollout costs at policies perturbed
on Frobenius spheres (one sphere per gain block). All agents share one
perturbation stream and apply the same update: the team-learner mode.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, TooManyUnstableSamples
from .models import InitMode, Policy, RunTrace, RunTraceRow, TeamModel
from .policy_gradient import evaluate
from .riccati import optimal_policy, solve_team, spectral_radius
from .seeding import STREAM_PERTURBATION, STREAM_ROLLOUT, derive_seed
from .simulator import rollout_batch
from .team_model import AggregatedModel, aggregate

logger = logging.getLogger(__name__)

MAX_REJECT_FRACTION = 0.2
MAX_ATTEMPTS = 50
NPG_RIDGE = 1e-8


@dataclass(frozen=True)
class PerturbationSample:
    """One sphere perturbation of all gain blocks and the rollout cost it produced."""
    perturbation: list[np.ndarray]
    cost: float
    seed: int


@dataclass(frozen=True)
class EmpiricalGradient:
    """Sphere-smoothing gradient estimate per gain block."""
    blocks: list[np.ndarray]
    samples: int
    horizon: int
    radius: float
    cost_mean: float
    cost_stderr: float
    rejected: int
    sigma: Optional[list[np.ndarray]] = None

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(b ** 2) for b in self.blocks)))


def sample_sphere(dims: Sequence[tuple[int, int]], r: float, seed: int) -> list[np.ndarray]:
    """Each block independently uniform on its radius-r Frobenius sphere (Gaussian fill, then normalise)."""
    if r <= 0:
        raise ValueError("sphere radius must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for shape in dims:
        z = rng.standard_normal(shape)
        out.append(z * (r / np.linalg.norm(z)))
    return out


def smoothed_gradient(values: np.ndarray, perturbations: Sequence[Sequence[np.ndarray]], r: float) -> list[np.ndarray]:
    """
    (1/L) sum_l (d_b / r^2) values[l] perturbations[l][b] for every block b.

    d_b is the number of entries of block b, so for a du x dx local block the
    factor is dx*du/r^2 and for the deep block Dx*Du/r^2.
    """
    values = np.asarray(values, dtype=float)
    L = len(values)
    if L == 0:
        raise ValueError("no samples")
    n_blocks = len(perturbations[0])
    out = []
    for b in range(n_blocks):
        stacked = np.stack([pert[b] for pert in perturbations])
        scale = stacked[0].size / r ** 2
        out.append(scale * np.tensordot(values, stacked, axes=1) / L)
    return out


def empirical_gradient(
    m: TeamModel,
    p: Policy,
    L: int,
    T: int,
    r: float,
    seed: int,
    mode: Literal["pg", "npg"] = "pg",
    antithetic: bool = False,
    iteration: int = 0,
    init_mode: InitMode = InitMode.GAUSSIAN,
) -> EmpiricalGradient:
    """
    Estimate ∇J at p from L perturbed rollouts of horizon T.

    Costs enter as J̃_T / T, the horizon-averaged team cost, so the estimate
    targets the gradient of the average-cost objective. With `antithetic`
    the L rollouts come in ±θ̃ pairs sharing one noise seed. Rollouts that
    overflow are rejected and redrawn with a fresh perturbation.

    Raises:
        ValueError: L is odd with antithetic pairing
        TooManyUnstableSamples: more than 20% of attempted samples overflowed
    """
    if L < 1 or T < 1:
        raise ValueError("L and T must be positive")
    if antithetic and L % 2:
        raise ValueError(f"antithetic pairing needs an even sample count, got L={L}")
    dims = [b.shape for b in p.blocks()]
    groups = L // 2 if antithetic else L
    signs = (1.0, -1.0) if antithetic else (1.0,)

    attempts = {q: 0 for q in range(groups)}
    accepted: dict[int, tuple[list[np.ndarray], list[float], Optional[list[np.ndarray]]]] = {}
    rejected = 0
    tried = 0
    pending = list(range(groups))
    while pending:
        perts, policies, seeds = {}, [], []
        for q in pending:
            perts[q] = sample_sphere(dims, r, derive_seed(seed, STREAM_PERTURBATION, iteration, q, attempts[q]))
            rollout_seed = derive_seed(seed, STREAM_ROLLOUT, iteration, q, attempts[q])
            for sign in signs:
                policies.append(Policy.from_blocks([theta + sign * d for theta, d in zip(p.blocks(), perts[q])]))
                seeds.append(rollout_seed)
        result = rollout_batch(m, policies, seeds, T, init_mode=init_mode, track_correlations=(mode == "npg"))

        retry = []
        for pos, q in enumerate(pending):
            rows = slice(pos * len(signs), (pos + 1) * len(signs))
            tried += 1
            if np.all(result.stable[rows]):
                sigma = None
                if result.correlations is not None:
                    sigma = [c[rows].mean(axis=0) for c in result.correlations]
                accepted[q] = (perts[q], list(result.totals[rows] / T), sigma)
            else:
                rejected += 1
                attempts[q] += 1
                if attempts[q] >= MAX_ATTEMPTS:
                    raise TooManyUnstableSamples(f"sample {q} overflowed {MAX_ATTEMPTS} times")
                retry.append(q)
        if rejected > MAX_REJECT_FRACTION * tried:
            raise TooManyUnstableSamples(
                f"{rejected} of {tried} perturbed rollouts overflowed; shrink r or start from a more stable policy"
            )
        pending = retry

    values, perturbations = [], []
    for q in range(groups):
        pert, costs, _ = accepted[q]
        for sign, cost in zip(signs, costs):
            values.append(cost)
            perturbations.append([sign * d for d in pert])
    values = np.asarray(values)
    blocks = smoothed_gradient(values, perturbations, r)

    sigma = None
    if mode == "npg":
        sigma = [np.mean([accepted[q][2][b] for q in range(groups)], axis=0) for b in range(len(dims))]
    if rejected:
        logger.warning("iteration %d: rejected %d unstable perturbation sample(s)", iteration, rejected)
    stderr = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return EmpiricalGradient(
        blocks=blocks,
        samples=len(values),
        horizon=T,
        radius=r,
        cost_mean=float(np.mean(values)),
        cost_stderr=stderr,
        rejected=rejected,
        sigma=sigma,
    )


def _unstable_block(agg: AggregatedModel, p: Policy) -> Optional[str]:
    """
    Safety check on the learner's side, using the model's A and B.

    The gradient estimate itself never sees the model; this only stops a run
    whose update would leave the stable set, before rollouts would overflow.
    """
    for block, theta in zip(agg.blocks(), p.blocks()):
        radius = spectral_radius(block.A + block.B @ theta)
        if radius >= 1.0:
            return f"{block.name}: closed-loop spectral radius {radius:.4f} >= 1"
    return None


def learn(
    m: TeamModel,
    p0: Policy,
    algo: Literal["pg", "npg"],
    eta: float,
    L: int,
    T: int,
    r: float,
    iters: int,
    seed: int,
    antithetic: bool = False,
    init_mode: InitMode = InitMode.GAUSSIAN,
    oracle: Optional[Policy] = None,
) -> RunTrace:
    """
    Zeroth-order PG / NPG with a team learner.

    Rows carry the estimated cost, the exact gap and gain error against the
    Riccati oracle, the estimated gradient norm, the rejected-sample count
    and the standard error of the cost estimate. An update that destabilises
    a block halts the run with the last stable policy.
    """
    if m.risk_factor != 0:
        raise ConfigError("model-free learning is risk-neutral only; set lambda to 0", field="risk_factor")
    if algo not in ("pg", "npg"):
        raise ValueError(f"unknown algorithm {algo!r}")
    agg = aggregate(m)
    if oracle is None:
        oracle = optimal_policy(solve_team(m, 0.0))
    best_cost = evaluate(m, oracle, 0.0, agg).cost

    p = p0
    trace = RunTrace(algo=f"zo-{algo}", final_policy=p, seed=seed)
    logger.info("starting zo-%s: eta=%g L=%d T=%d r=%g iters=%d seed=%d", algo, eta, L, T, r, iters, seed)
    for k in range(iters + 1):
        est = empirical_gradient(m, p, L, T, r, seed, mode=algo, antithetic=antithetic,
                                 iteration=k, init_mode=init_mode)
        try:
            gap = evaluate(m, p, 0.0, agg).cost - best_cost
        except NumericalError:
            gap = None
        trace.rows.append(RunTraceRow(
            iteration=k,
            cost=est.cost_mean,
            gap=gap,
            grad_norm=est.norm,
            gain_err=p.distance(oracle),
            rejected_samples=est.rejected,
            estimate_stderr=est.cost_stderr,
            step_size=eta,
        ))
        logger.debug("zo iter %d: J~=%.6g gain_err=%.4g", k, est.cost_mean, trace.rows[-1].gain_err)
        if k == iters:
            break

        if algo == "pg":
            direction = list(est.blocks)
        else:
            direction = [
                np.linalg.solve(sigma + NPG_RIDGE * np.eye(sigma.shape[0]), grad.T).T
                for grad, sigma in zip(est.blocks, est.sigma)
            ]
        # blocks without residual agents leave the cost unchanged
        direction = [np.zeros_like(d) if block.multiplicity == 0 else d
                     for d, block in zip(direction, agg.blocks())]
        candidate = Policy.from_blocks([theta - eta * d for theta, d in zip(p.blocks(), direction)])
        problem = _unstable_block(agg, candidate)
        if problem:
            trace.halted_reason = f"UnstableIterate: {problem}"
            logger.warning("zo-%s halted at iteration %d: %s", algo, k, problem)
            break
        p = candidate

    trace.final_policy = p
    return trace
