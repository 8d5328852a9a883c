"""
Deep Riccati equations: the model-known optimal team strategy.

Each decoupled block is solved by value iteration of the risk-sensitive
discrete Riccati map

    P = Q + A'P̃A - A'P̃B (R + B'P̃B)^-1 B'P̃A,    P̃ = P (I - 2 λ W P)^-1

starting from P = Q. Gains are stored positive (closed loop A - B θ*);
`optimal_policy` flips them into the u = θx convention of Policy.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import settings
from .errors import FeasibilityLost, NoConvergence, NotWeaklyCoupled
from .models import Policy, TeamModel
from .team_model import (
    AggregatedModel,
    LQBlock,
    aggregate,
    deep_dims,
    feature_slots,
    is_weakly_coupled,
    require_valid,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class BlockSolution:
    """Solution of one block's Riccati equation."""
    P: np.ndarray
    P_tilde: np.ndarray
    gain: np.ndarray
    iterations: int
    residual: float
    closed_loop_radius: float


@dataclass(frozen=True)
class RiccatiSolution:
    """Riccati matrices and optimal gains for every residual block and the deep block."""
    P: list[np.ndarray]
    P_tilde: list[np.ndarray]
    P_bold: np.ndarray
    P_tilde_bold: np.ndarray
    theta_star: list[np.ndarray]
    theta_bar_star: np.ndarray
    iterations: int
    residual: float
    risk_factor: float


def spectral_radius(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def risk_margin(P: np.ndarray, W: np.ndarray, lam: float) -> float:
    """Smallest eigenvalue of I - 2λWP (WP is similar to a symmetric matrix, so its spectrum is real)."""
    if lam == 0 or P.size == 0:
        return 1.0
    return float(1.0 - 2.0 * lam * np.max(np.linalg.eigvals(W @ P).real))


def risk_tilde(P: np.ndarray, W: np.ndarray, lam: float, block: str = "") -> np.ndarray:
    """
    P̃ = P (I - 2λWP)^-1.

    Raises:
        FeasibilityLost: if I - 2λWP is not positive definite
    """
    if lam == 0:
        return P
    margin = risk_margin(P, W, lam)
    if margin <= 0:
        raise FeasibilityLost(
            f"{block or 'block'}: I - 2*lambda*W*P lost positive definiteness "
            f"(margin {margin:.3g}, lambda={lam}); reduce the risk factor"
        )
    M = np.eye(P.shape[0]) - 2.0 * lam * W @ P
    Pt = np.linalg.solve(M.T, P.T).T
    return 0.5 * (Pt + Pt.T)


def riccati_step(block: LQBlock, P: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One application of the Riccati map; returns (P_next, P̃, gain) with the gain taken at P."""
    A, B = block.A, block.B
    Pt = risk_tilde(P, block.risk_noise, lam, block.name)
    BtP = B.T @ Pt
    gain = np.linalg.solve(block.R + BtP @ B, BtP @ A)
    P_next = block.Q + A.T @ Pt @ A - A.T @ Pt @ B @ gain
    return 0.5 * (P_next + P_next.T), Pt, gain


def solve_block(block: LQBlock, lam: float, max_iter: Optional[int] = None,
                tol: float = RESIDUAL_TOL) -> BlockSolution:
    """
    Value iteration from P = Q until ||P_next - P||_F <= tol (1 + ||P||_F).

    Raises:
        FeasibilityLost: an iterate violated the risk condition
        NoConvergence: iteration cap reached
    """
    max_iter = max_iter or settings.max_iterations()
    P = block.Q.copy()
    for iteration in range(1, max_iter + 1):
        P_next, _, _ = riccati_step(block, P, lam)
        step = float(np.linalg.norm(P_next - P))
        P = P_next
        if step <= tol * (1.0 + float(np.linalg.norm(P))):
            break
    else:
        raise NoConvergence(f"{block.name}: Riccati iteration did not converge in {max_iter} iterations")

    P_check, P_tilde, gain = riccati_step(block, P, lam)
    residual = float(np.linalg.norm(P_check - P))
    radius = spectral_radius(block.A - block.B @ gain)
    if radius >= 1.0:
        logger.warning("%s: optimal closed loop has spectral radius %.4f >= 1", block.name, radius)
    logger.debug("%s: converged in %d iterations (residual %.3g)", block.name, iteration, residual)
    return BlockSolution(P, P_tilde, gain, iteration, residual, radius)


def solve_delta_riccati(block: LQBlock, lam: float) -> BlockSolution:
    """Residual-subsystem Riccati equation of one sub-population (risk noise (mu/n) Sigma_w)."""
    return solve_block(block, lam)


def solve_deep_riccati(agg: AggregatedModel, lam: float) -> BlockSolution:
    """Deep-state Riccati equation on (A_bold, B_bold, Q_bold, R_bold, Sigma_w_bold)."""
    return solve_block(agg.deep_block, lam)


def _lambda(m: TeamModel, lam: Optional[float]) -> float:
    return float(m.risk_factor if lam is None else lam)


def solve_team(m: TeamModel, lam: Optional[float] = None) -> RiccatiSolution:
    """Solve all S + 1 deep Riccati equations of a validated model."""
    require_valid(m)
    lam = _lambda(m, lam)
    agg = aggregate(m)
    deltas = [solve_delta_riccati(block, lam) for block in agg.delta_blocks]
    deep = solve_deep_riccati(agg, lam)
    logger.info("solved %d residual blocks and the deep block at lambda=%g", len(deltas), lam)
    return RiccatiSolution(
        P=[d.P for d in deltas],
        P_tilde=[d.P_tilde for d in deltas],
        P_bold=deep.P,
        P_tilde_bold=deep.P_tilde,
        theta_star=[d.gain for d in deltas],
        theta_bar_star=deep.gain,
        iterations=max([d.iterations for d in deltas] + [deep.iterations]),
        residual=max([d.residual for d in deltas] + [deep.residual]),
        risk_factor=lam,
    )


def solve_weakly_coupled(m: TeamModel, lam: Optional[float] = None) -> RiccatiSolution:
    """
    Solve the deep equation feature by feature when the coupling is weak.

    Each (s, j) pair gets a small equation on (A + Ā^j, B + B̄^j, Q + Q̄^j,
    R + R̄^j) with risk noise (mu/n) Sigma_w; the deep matrices are then
    reassembled as diag(mu(s) P̄^j(s)).

    Raises:
        NotWeaklyCoupled: a coupling term mixes features
    """
    require_valid(m)
    if not is_weakly_coupled(m):
        raise NotWeaklyCoupled("coupling terms act across features; use solve_team instead")
    lam = _lambda(m, lam)
    agg = aggregate(m)
    deltas = [solve_delta_riccati(block, lam) for block in agg.delta_blocks]

    Dx, Du = deep_dims(m)
    P_bold = np.zeros((Dx, Dx))
    P_tilde_bold = np.zeros((Dx, Dx))
    gain_bold = np.zeros((Du, Dx))
    iterations = max(d.iterations for d in deltas)
    residual = max(d.residual for d in deltas)
    for slot in feature_slots(m):
        sub = m.subs[slot.sub]
        feature_block = LQBlock(
            name=f"deep[{slot.sub},{slot.feature}]",
            A=sub.A + sub.A_bar[slot.feature][:, slot.x],
            B=sub.B + sub.B_bar[slot.feature][:, slot.u],
            Q=sub.Q + m.qbar_cross[slot.x, slot.x] / sub.mu,
            R=sub.R + m.rbar_cross[slot.u, slot.u] / sub.mu,
            risk_noise=(sub.mu / sub.n) * sub.sigma_w,
            multiplicity=1.0,
        )
        sol = solve_block(feature_block, lam)
        P_bold[slot.x, slot.x] = sub.mu * sol.P
        P_tilde_bold[slot.x, slot.x] = sub.mu * sol.P_tilde
        gain_bold[slot.u, slot.x] = sol.gain
        iterations = max(iterations, sol.iterations)
        residual = max(residual, sub.mu * sol.residual)

    return RiccatiSolution(
        P=[d.P for d in deltas],
        P_tilde=[d.P_tilde for d in deltas],
        P_bold=P_bold,
        P_tilde_bold=P_tilde_bold,
        theta_star=[d.gain for d in deltas],
        theta_bar_star=gain_bold,
        iterations=iterations,
        residual=residual,
        risk_factor=lam,
    )


def optimal_policy(sol: RiccatiSolution) -> Policy:
    """The optimal strategy as a Policy: gains negated into the u = θx convention."""
    return Policy(theta=[-g for g in sol.theta_star], theta_bar=-sol.theta_bar_star)
