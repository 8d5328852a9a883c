"""
n-agent simulation and Monte-Carlo objective estimates.

All rollouts go through `rollout_batch`, which advances many (policy, seed)
pairs at once with the agent dimension vectorised. Agent noise comes from
per-agent Philox streams (see seeding), so a rollout is a pure function of
(model, policy, horizon, seed, initial-state mode).
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import settings
from .errors import MGFOverflow, NumericOverflow
from .gauge import AgentField, deep_project_batch, expand_policy_batch, gauge_residual_batch, team_cost_batch
from .models import InitMode, ObjectiveEstimate, ObjectiveMode, Policy, TeamModel
from .seeding import agent_stream
from .team_model import deep_dims

logger = logging.getLogger(__name__)

OVERFLOW_NORM = 1e12
UNIFORM_INIT_BOUNDS = (0.0, 0.1)


@dataclass
class Trajectory:
    """One recorded rollout; states[t], actions[t], noises[t] belong to step t+1."""
    horizon: int
    states: list[AgentField]
    actions: list[AgentField]
    noises: list[AgentField]
    costs: np.ndarray
    seed: int


@dataclass
class BatchResult:
    """Outcome of a batch of rollouts."""
    costs: np.ndarray
    overflow_step: np.ndarray
    correlations: Optional[list[np.ndarray]] = None
    trajectory: Optional[Trajectory] = field(default=None, repr=False)

    @property
    def stable(self) -> np.ndarray:
        return self.overflow_step < 0

    @property
    def totals(self) -> np.ndarray:
        """Sum of team costs over the horizon, one per rollout."""
        return self.costs.sum(axis=1)


def _agent_draws(
    m: TeamModel,
    seed: int,
    T: int,
    init_mode: InitMode,
    init_bounds: tuple[float, float],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Initial states (n, dx) and noise (T, n, dx) per sub-population from the agents' own streams."""
    x0, noise = [], []
    for s, sub in enumerate(m.subs):
        chol_x = np.linalg.cholesky(sub.sigma_x)
        chol_w = np.linalg.cholesky(sub.sigma_w)
        xs = np.empty((sub.n, sub.dx))
        ws = np.empty((T, sub.n, sub.dx))
        for i in range(sub.n):
            rng = agent_stream(seed, s, i)
            if init_mode == InitMode.UNIFORM:
                xs[i] = rng.uniform(init_bounds[0], init_bounds[1], size=sub.dx)
            else:
                xs[i] = chol_x @ rng.standard_normal(sub.dx)
            ws[:, i, :] = rng.standard_normal((T, sub.dx)) @ chol_w.T
        x0.append(xs)
        noise.append(ws)
    return x0, noise


def _policy_stacks(m: TeamModel, policies: Sequence[Policy]) -> tuple[list[np.ndarray], np.ndarray]:
    theta = [np.stack([p.theta[s] for p in policies]) for s in range(len(m.subs))]
    theta_bar = np.stack([p.theta_bar for p in policies])
    return theta, theta_bar


def _simulate(
    m: TeamModel,
    policies: Sequence[Policy],
    seeds: Sequence[int],
    T: int,
    init_mode: InitMode,
    init_bounds: tuple[float, float],
    noise: bool,
    x0: Optional[AgentField],
    track_correlations: bool,
    record: bool,
) -> BatchResult:
    batch = len(policies)
    theta, theta_bar = _policy_stacks(m, policies)

    cache: dict[int, tuple[list[np.ndarray], list[np.ndarray]]] = {}
    draws = []
    for seed in seeds:
        if seed not in cache:
            cache[seed] = _agent_draws(m, seed, T, init_mode, init_bounds)
        draws.append(cache[seed])

    if x0 is not None:
        x = [np.repeat(np.asarray(v, dtype=float)[None], batch, axis=0) for v in x0]
    else:
        x = [np.stack([d[0][s] for d in draws]) for s in range(len(m.subs))]
    w = [np.stack([d[1][s] for d in draws], axis=1) for s in range(len(m.subs))]
    if not noise:
        w = [np.zeros_like(ws) for ws in w]

    a_bar = [np.stack(sub.A_bar) for sub in m.subs]
    b_bar = [np.stack(sub.B_bar) for sub in m.subs]

    costs = np.zeros((batch, T))
    overflow = np.full(batch, -1, dtype=int)
    correlations = None
    if track_correlations:
        Dx, _ = deep_dims(m)
        correlations = [np.zeros((batch, sub.dx, sub.dx)) for sub in m.subs] + [np.zeros((batch, Dx, Dx))]
    states, actions, noises = [], [], []

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            norms = np.zeros(batch)
            for xs in x:
                norms = np.maximum(norms, np.max(np.linalg.norm(xs, axis=2), axis=1))
            bad = (~np.isfinite(norms) | (norms > OVERFLOW_NORM)) & (overflow < 0)
            if np.any(bad):
                overflow[bad] = t + 1
                for xs in x:
                    xs[bad] = 0.0

            xbar = deep_project_batch(x, m)
            u = expand_policy_batch(theta, theta_bar, x, xbar, m)
            ubar = deep_project_batch(u, m)
            costs[:, t] = team_cost_batch(m, x, u, xbar, ubar)

            if track_correlations:
                correlations[-1] += np.einsum("bi,bj->bij", xbar, xbar)
                for s, (sub, dx) in enumerate(zip(m.subs, gauge_residual_batch(x, m))):
                    correlations[s] += (sub.mu / sub.n) * np.einsum("bid,bie->bde", dx, dx)
            if record:
                states.append([xs[0].copy() for xs in x])
                actions.append([us[0].copy() for us in u])
                noises.append([ws[t, 0].copy() for ws in w])

            nxt = []
            for s, sub in enumerate(m.subs):
                coupling = np.einsum("jdk,bk->bjd", a_bar[s], xbar) + np.einsum("jdk,bk->bjd", b_bar[s], ubar)
                nxt.append(
                    x[s] @ sub.A.T + u[s] @ sub.B.T + np.einsum("if,bfd->bid", sub.alpha, coupling) + w[s][t]
                )
            x = nxt

    costs[overflow >= 0] = np.inf
    if track_correlations:
        correlations = [c / T for c in correlations]
    trajectory = None
    if record:
        trajectory = Trajectory(T, states, actions, noises, costs[0].copy(), int(seeds[0]))
    return BatchResult(costs, overflow, correlations, trajectory)


def rollout_batch(
    m: TeamModel,
    policies: Sequence[Policy],
    seeds: Sequence[int],
    T: int,
    init_mode: InitMode = InitMode.GAUSSIAN,
    init_bounds: tuple[float, float] = UNIFORM_INIT_BOUNDS,
    noise: bool = True,
    x0: Optional[AgentField] = None,
    track_correlations: bool = False,
) -> BatchResult:
    """
    Simulate len(policies) rollouts, rollout k under policies[k] with noise seed seeds[k].

    Rollouts sharing a seed share their initial states and noise (common
    random numbers). Overflowing rollouts are not raised: their
    `overflow_step` is set and their costs are inf.

    Args:
        track_correlations: also return per-rollout state correlations
            (mu/n) sum_i Δx Δx' per sub-population and x̄ x̄' for the deep
            block, averaged over the horizon
    """
    if len(policies) != len(seeds):
        raise ValueError("policies and seeds must have the same length")
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    for p in policies:
        p.check_shapes(m)

    chunk = settings.rollout_chunk()
    parts = []
    for start in range(0, len(policies), chunk):
        parts.append(_simulate(
            m, policies[start:start + chunk], seeds[start:start + chunk], T,
            init_mode, init_bounds, noise, x0, track_correlations, record=False,
        ))
    correlations = None
    if track_correlations:
        correlations = [np.concatenate([part.correlations[k] for part in parts]) for k in range(len(m.subs) + 1)]
    return BatchResult(
        costs=np.concatenate([part.costs for part in parts]),
        overflow_step=np.concatenate([part.overflow_step for part in parts]),
        correlations=correlations,
    )


def rollout(
    m: TeamModel,
    p: Policy,
    T: int,
    seed: int,
    init_mode: InitMode = InitMode.GAUSSIAN,
    init_bounds: tuple[float, float] = UNIFORM_INIT_BOUNDS,
    noise: bool = True,
    x0: Optional[AgentField] = None,
) -> Trajectory:
    """
    Simulate and record one rollout.

    Raises:
        NumericOverflow: some agent state norm exceeded 1e12
    """
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    p.check_shapes(m)
    result = _simulate(m, [p], [seed], T, init_mode, init_bounds, noise, x0,
                       track_correlations=False, record=True)
    step = int(result.overflow_step[0])
    if step >= 0:
        raise NumericOverflow(f"state norm exceeded {OVERFLOW_NORM:g} at step {step}", step=step)
    return result.trajectory


def _seed_totals(m: TeamModel, p: Policy, T: int, seeds: Sequence[int], init_mode: InitMode) -> np.ndarray:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    result = rollout_batch(m, [p] * len(seeds), seeds, T, init_mode=init_mode)
    if not np.all(result.stable):
        step = int(result.overflow_step[~result.stable][0])
        raise NumericOverflow(f"rollout overflowed at step {step}; the policy is not stable", step=step)
    return result.totals


def estimate_risk_neutral(
    m: TeamModel,
    p: Policy,
    T: int,
    seeds: Sequence[int],
    init_mode: InitMode = InitMode.GAUSSIAN,
) -> ObjectiveEstimate:
    """Mean over seeds of the horizon-averaged team cost; no burn-in is discarded."""
    averages = _seed_totals(m, p, T, seeds, init_mode) / T
    k = len(averages)
    stderr = float(np.std(averages, ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    return ObjectiveEstimate(
        value=float(np.mean(averages)),
        stderr=stderr,
        mode=ObjectiveMode.RISK_NEUTRAL,
        horizon=T,
        seed_count=k,
    )


def estimate_risk_sensitive(
    m: TeamModel,
    p: Policy,
    T: int,
    seeds: Sequence[int],
    lam: float,
    init_mode: InitMode = InitMode.GAUSSIAN,
) -> ObjectiveEstimate:
    """
    (1/(λT)) log of the empirical mean of exp(λ sum_t c̄_t), computed with max subtraction.

    The reported approximation is mean + (λ/2T) Var of the cost sums, the
    small-risk expansion of the same quantity.

    Raises:
        MGFOverflow: lambda times some cost sum is not finite
    """
    if lam <= 0:
        raise ValueError("risk-sensitive estimation needs lambda > 0")
    totals = _seed_totals(m, p, T, seeds, init_mode)
    with np.errstate(over="ignore"):
        exponents = lam * totals
    if not np.all(np.isfinite(exponents)):
        raise MGFOverflow("lambda * cost sum is not finite")

    k = len(totals)
    value = (logsumexp(exponents) - np.log(k)) / (lam * T)
    weights = np.exp(exponents - np.max(exponents))
    stderr = 0.0
    approximation = float(np.mean(totals) / T)
    if k > 1:
        stderr = float(np.std(weights, ddof=1) / np.sqrt(k) / (np.mean(weights) * lam * T))
        approximation += float(lam / (2 * T) * np.var(totals, ddof=1))
    return ObjectiveEstimate(
        value=float(value),
        stderr=stderr,
        mode=ObjectiveMode.RISK_SENSITIVE,
        horizon=T,
        seed_count=k,
        approximation=approximation,
    )


def horizon_bias_curve(
    m: TeamModel,
    p: Policy,
    horizons: Sequence[int],
    seeds: Sequence[int],
    reference: float,
    init_mode: InitMode = InitMode.GAUSSIAN,
) -> list[tuple[int, float, float]]:
    """(T, |estimate - reference|, stderr) for each horizon; reference is the exact average cost."""
    curve = []
    for T in horizons:
        est = estimate_risk_neutral(m, p, T, seeds, init_mode=init_mode)
        curve.append((int(T), abs(est.value - reference), est.stderr))
        logger.debug("horizon %d: bias %.3g (stderr %.3g)", T, curve[-1][1], est.stderr)
    return curve


def export_trajectory_csv(traj: Trajectory, m: TeamModel, path: Path) -> Path:
    """One row per (step, agent): t, sub, agent, state components, action components, cbar."""
    dx_max = max(sub.dx for sub in m.subs)
    du_max = max(sub.du for sub in m.subs)
    header = ["t", "sub", "agent"] + [f"x{k}" for k in range(dx_max)] + [f"u{k}" for k in range(du_max)] + ["cbar"]
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for t in range(traj.horizon):
            for s, sub in enumerate(m.subs):
                for i in range(sub.n):
                    xs = list(traj.states[t][s][i]) + [""] * (dx_max - sub.dx)
                    us = list(traj.actions[t][s][i]) + [""] * (du_max - sub.du)
                    writer.writerow([t + 1, s, i, *xs, *us, traj.costs[t]])
    return path
