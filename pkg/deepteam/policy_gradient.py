"""
Model-based policy evaluation, exact policy gradients and the PG / NPG loops.

Policies store gains in the u = θx convention; every block is evaluated
with the feedback gain K = -θ so closed loops read A - BK. Gradients and
E factors are reported with respect to the stored θ, which keeps
grad = 2 E Σ and makes the update rules read θ - η∇ and θ - 2ηE.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import settings
from .errors import (
    FeasibilityLost,
    NoConvergence,
    NumericalError,
    SingularCovariance,
    UnstableIterate,
    UnstablePolicy,
)
from .models import Policy, RunTrace, RunTraceRow, TeamModel
from .riccati import optimal_policy, risk_tilde, solve_team, spectral_radius
from .team_model import AggregatedModel, LQBlock, aggregate

logger = logging.getLogger(__name__)

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 10**6
EVAL_TOL = 1e-14
ARMIJO_C = 1e-4
MAX_HALVINGS = 30

Algo = Literal["pg", "npg"]


@dataclass(frozen=True)
class BlockEvaluation:
    """Evaluation of one block under feedback gain K."""
    P: np.ndarray
    P_tilde: np.ndarray
    Sigma: np.ndarray
    cost: float
    risk_neutral_cost: float
    closed_loop_radius: float
    multiplicity: float = 1.0


@dataclass(frozen=True)
class PolicyEvaluation:
    """Per-block evaluation matrices; residual blocks first, deep block last."""
    blocks: list[BlockEvaluation]
    risk_factor: float

    @property
    def P(self) -> list[np.ndarray]:
        return [b.P for b in self.blocks[:-1]]

    @property
    def P_tilde(self) -> list[np.ndarray]:
        return [b.P_tilde for b in self.blocks[:-1]]

    @property
    def P_bold(self) -> np.ndarray:
        return self.blocks[-1].P

    @property
    def P_tilde_bold(self) -> np.ndarray:
        return self.blocks[-1].P_tilde

    @property
    def Sigma(self) -> list[np.ndarray]:
        return [b.Sigma for b in self.blocks[:-1]]

    @property
    def Sigma_bold(self) -> np.ndarray:
        return self.blocks[-1].Sigma

    @property
    def cost(self) -> float:
        """Objective being optimised: trace cost at λ=0, log-det risk-sensitive cost otherwise."""
        return float(sum(b.cost for b in self.blocks))

    @property
    def risk_neutral_cost(self) -> float:
        return float(sum(b.risk_neutral_cost for b in self.blocks))


@dataclass(frozen=True)
class GradientBundle:
    """Gradient of the objective with respect to the stored gains, with its E factors."""
    grad_theta: list[np.ndarray]
    grad_theta_bar: np.ndarray
    E_theta: list[np.ndarray]
    E_bold: np.ndarray

    def blocks(self) -> list[np.ndarray]:
        return [*self.grad_theta, self.grad_theta_bar]

    def e_blocks(self) -> list[np.ndarray]:
        return [*self.E_theta, self.E_bold]

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g ** 2) for g in self.blocks())))


def lyapunov_series(G: np.ndarray, M: np.ndarray, tol: float = SERIES_TOL,
                    max_terms: int = SERIES_MAX_TERMS) -> np.ndarray:
    """
    sum_{t>=0} G^t M G'^t, the fixed point of X = M + G X G', summed by doubling.

    Stops once the latest increment is below tol * ||X||.
    """
    X = M.copy()
    power = G.copy()
    terms = 1
    while True:
        increment = power @ X @ power.T
        X = X + increment
        terms *= 2
        if np.linalg.norm(increment) <= tol * np.linalg.norm(X):
            break
        if terms >= max_terms:
            raise NoConvergence(f"state-correlation series did not settle within {max_terms} terms")
        power = power @ power
    return 0.5 * (X + X.T)


def evaluate_block(block: LQBlock, K: np.ndarray, lam: float) -> BlockEvaluation:
    """
    Value and state-correlation matrices of one block under u = -K x.

    Raises:
        UnstablePolicy: spectral radius of A - BK is at least 1
        FeasibilityLost: the risk condition fails along the evaluation fixed point
    """
    F = block.A - block.B @ K
    radius = spectral_radius(F)
    if radius >= 1.0:
        raise UnstablePolicy(f"{block.name}: closed-loop spectral radius {radius:.4f} >= 1")
    W, c = block.risk_noise, block.multiplicity
    stage = block.Q + K.T @ block.R @ K
    P_neutral = solve_discrete_lyapunov(F.T, stage)
    P_neutral = 0.5 * (P_neutral + P_neutral.T)
    risk_neutral_cost = c * float(np.trace(W @ P_neutral))

    if lam == 0:
        return BlockEvaluation(P_neutral, P_neutral, c * lyapunov_series(F, W), risk_neutral_cost,
                               risk_neutral_cost, radius, c)

    P = P_neutral
    cap = settings.max_iterations()
    for _ in range(cap):
        P_next = stage + F.T @ risk_tilde(P, W, lam, block.name) @ F
        P_next = 0.5 * (P_next + P_next.T)
        step = float(np.linalg.norm(P_next - P))
        P = P_next
        if step <= EVAL_TOL * (1.0 + float(np.linalg.norm(P))):
            break
    else:
        raise NoConvergence(f"{block.name}: risk-sensitive evaluation did not converge in {cap} iterations")

    P_tilde = risk_tilde(P, W, lam, block.name)
    U = np.linalg.inv(np.eye(P.shape[0]) - 2.0 * lam * W @ P)
    W_tilde = U @ W
    Sigma = c * lyapunov_series(U @ F, 0.5 * (W_tilde + W_tilde.T))
    eigs = np.linalg.eigvals(W @ P).real
    cost = -c / (2.0 * lam) * float(np.sum(np.log1p(-2.0 * lam * eigs)))
    return BlockEvaluation(P, P_tilde, Sigma, cost, risk_neutral_cost, radius, c)


def _lambda(m: TeamModel, lam: Optional[float]) -> float:
    return float(m.risk_factor if lam is None else lam)


def evaluate(m: TeamModel, p: Policy, lam: Optional[float] = None,
             agg: Optional[AggregatedModel] = None) -> PolicyEvaluation:
    """
    Evaluate a stationary policy on every decoupled block.

    The risk-neutral cost is sum_s mu(s)(1 - f(s)/n(s)) tr(P_θ(s) Σ_w(s)) + tr(P_bold Σ_w_bold);
    for λ > 0 the optimised cost is -(c/2λ) log det(I - 2λ W P) per block.
    """
    p.check_shapes(m)
    lam = _lambda(m, lam)
    agg = agg or aggregate(m)
    blocks = [evaluate_block(block, -theta, lam) for block, theta in zip(agg.blocks(), p.blocks())]
    return PolicyEvaluation(blocks, lam)


def gradient(m: TeamModel, p: Policy, lam: Optional[float] = None,
             evaluation: Optional[PolicyEvaluation] = None,
             agg: Optional[AggregatedModel] = None) -> GradientBundle:
    """Exact gradient 2 E Σ per block, E = (R + B'P̃B)K - B'P̃A taken with respect to θ = -K."""
    agg = agg or aggregate(m)
    evaluation = evaluation or evaluate(m, p, lam, agg)
    grads, es = [], []
    for block, theta, ev in zip(agg.blocks(), p.blocks(), evaluation.blocks):
        K = -theta
        BtP = block.B.T @ ev.P_tilde
        E_K = (block.R + BtP @ block.B) @ K - BtP @ block.A
        E_theta = -E_K
        es.append(E_theta)
        grads.append(2.0 * E_theta @ ev.Sigma)
    return GradientBundle(grads[:-1], grads[-1], es[:-1], es[-1])


def pg_step(p: Policy, g: GradientBundle, eta: float) -> Policy:
    """θ ← θ - η∇ on every block."""
    return Policy.from_blocks([theta - eta * grad for theta, grad in zip(p.blocks(), g.blocks())])


def natural_direction(g: GradientBundle, ev: PolicyEvaluation) -> list[np.ndarray]:
    """
    ∇ Σ^-1 per block.

    A residual block with n(s) = f(s) has no agents beyond its features, so
    its Σ and gradient vanish identically; its direction is zero.
    """
    out = []
    for grad, block_ev in zip(g.blocks(), ev.blocks):
        if block_ev.multiplicity == 0:
            out.append(np.zeros_like(grad))
            continue
        Sigma = block_ev.Sigma
        if not np.any(Sigma) or np.linalg.cond(Sigma) > 1e14:
            raise SingularCovariance("state-correlation block is singular; natural gradient undefined")
        out.append(np.linalg.solve(Sigma, grad.T).T)
    return out


def npg_step(p: Policy, g: GradientBundle, ev: PolicyEvaluation, eta: float) -> Policy:
    """θ ← θ - η ∇ Σ^-1, which equals θ - 2ηE."""
    return Policy.from_blocks([theta - eta * d for theta, d in zip(p.blocks(), natural_direction(g, ev))])


def run(
    m: TeamModel,
    p0: Policy,
    algo: Algo,
    eta: float,
    max_iters: int,
    tol: float,
    lam: Optional[float] = None,
    backtracking: bool = True,
    oracle: Optional[Policy] = None,
) -> RunTrace:
    """
    Exact PG or NPG from p0 until ||∇||_F <= tol or max_iters updates.

    With backtracking the step is halved (up to 30 times) until the Armijo
    condition holds, so the objective never increases. Without it, an
    iterate leaving the stable/feasible set halts the run and the trace
    keeps the last stable policy.
    """
    if algo not in ("pg", "npg"):
        raise ValueError(f"unknown algorithm {algo!r}")
    lam = _lambda(m, lam)
    agg = aggregate(m)

    if oracle is None:
        try:
            oracle = optimal_policy(solve_team(m, lam))
        except NumericalError as exc:
            logger.warning("no Riccati oracle available (%s); gaps and gain errors are omitted", exc)
    best_cost = evaluate(m, oracle, lam, agg).cost if oracle is not None else None

    p = p0
    ev = evaluate(m, p, lam, agg)
    trace = RunTrace(algo=algo, final_policy=p)
    step_size = None
    logger.info("starting %s run: eta=%g, max_iters=%d, lambda=%g", algo, eta, max_iters, lam)

    for k in range(max_iters + 1):
        g = gradient(m, p, lam, ev, agg)
        row = RunTraceRow(
            iteration=k,
            cost=ev.cost,
            gap=None if best_cost is None else ev.cost - best_cost,
            grad_norm=g.norm,
            gain_err=None if oracle is None else p.distance(oracle),
            step_size=step_size,
        )
        trace.rows.append(row)
        logger.debug("iter %d: J=%.10g grad=%.3g", k, row.cost, row.grad_norm)
        if g.norm <= tol:
            trace.converged = True
            break
        if k == max_iters:
            break

        direction = g.blocks() if algo == "pg" else natural_direction(g, ev)
        slope = float(sum(np.sum(a * b) for a, b in zip(g.blocks(), direction)))
        step = eta
        accepted = None
        for _ in range(MAX_HALVINGS + 1 if backtracking else 1):
            candidate = Policy.from_blocks([theta - step * d for theta, d in zip(p.blocks(), direction)])
            try:
                cand_ev = evaluate(m, candidate, lam, agg)
            except (UnstablePolicy, FeasibilityLost, NoConvergence) as exc:
                if not backtracking:
                    trace.halted_reason = f"{UnstableIterate.__name__}: {exc}"
                    break
                step /= 2.0
                continue
            slack = 1e-14 * abs(ev.cost)
            if not backtracking or cand_ev.cost <= ev.cost - ARMIJO_C * step * slope + slack:
                accepted = (candidate, cand_ev)
                break
            step /= 2.0
        if accepted is None:
            if trace.halted_reason is None:
                trace.halted_reason = "line_search_exhausted"
            logger.warning("%s run halted at iteration %d: %s", algo, k, trace.halted_reason)
            break
        p, ev = accepted
        step_size = step

    trace.final_policy = p
    logger.info("%s run finished after %d updates (converged=%s)", algo, trace.iterations, trace.converged)
    return trace
