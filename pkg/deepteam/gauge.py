"""
Deep states, the gauge transformation and policy expansion.

An agent field is a list with one (n(s), d) array per sub-population; a
deep vector stacks the deep states x̄^j(s) of all sub-populations and
features. The `*_batch` variants carry a leading batch axis and are what
the simulator runs on; the plain functions are single-instance wrappers.
"""
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, GaugeIndexError
from .models import Policy, TeamModel
from .team_model import AggregatedModel, aggregate, sub_slices

AgentField = list[np.ndarray]
DeepVector = np.ndarray
FieldKind = Literal["state", "action"]


def _field_kind(field: Sequence[np.ndarray], m: TeamModel, batched: bool) -> FieldKind:
    if len(field) != len(m.subs):
        raise DimensionMismatch("field", (len(m.subs),), (len(field),))
    offset = 1 if batched else 0
    for kind, dims in (("state", [sub.dx for sub in m.subs]), ("action", [sub.du for sub in m.subs])):
        if all(v.ndim == 2 + offset and v.shape[offset:] == (sub.n, d)
               for v, sub, d in zip(field, m.subs, dims)):
            return kind
    shapes = [tuple(v.shape) for v in field]
    raise DimensionMismatch("field", detail=f"shapes {shapes} match neither states nor actions of the model")


def deep_project_batch(field: Sequence[np.ndarray], m: TeamModel) -> np.ndarray:
    """(1/n(s)) sum_i alpha^{ij}(s) v^i for every (s, j); returns shape (batch, D)."""
    _field_kind(field, m, batched=True)
    parts = []
    for sub, v in zip(m.subs, field):
        vbar = np.einsum("if,bid->bfd", sub.alpha, v) / sub.n
        parts.append(vbar.reshape(v.shape[0], -1))
    return np.concatenate(parts, axis=1)


def gauge_residual_batch(field: Sequence[np.ndarray], m: TeamModel) -> list[np.ndarray]:
    _field_kind(field, m, batched=True)
    out = []
    for sub, v in zip(m.subs, field):
        vbar = np.einsum("if,bid->bfd", sub.alpha, v) / sub.n
        out.append(v - np.einsum("if,bfd->bid", sub.alpha, vbar))
    return out


def expand_policy_batch(
    theta: Sequence[np.ndarray],
    theta_bar: np.ndarray,
    x: Sequence[np.ndarray],
    xbar: np.ndarray,
    m: TeamModel,
) -> list[np.ndarray]:
    """
    Per-agent actions of a batch of policies.

    Args:
        theta: one (batch, du, dx) gain stack per sub-population
        theta_bar: (batch, Du, Dx) deep gains
        x: agent states, one (batch, n, dx) array per sub-population
        xbar: (batch, Dx) deep states of x

    Returns:
        Agent actions u^i = theta Δx^i + sum_j alpha^{ij} ū^j(s) with ū = theta_bar x̄
    """
    ubar = np.einsum("bij,bj->bi", theta_bar, xbar)
    residual = gauge_residual_batch(x, m)
    out = []
    for sub, gain, dx, (_, u_sl) in zip(m.subs, theta, residual, sub_slices(m)):
        ubar_s = ubar[:, u_sl].reshape(ubar.shape[0], sub.f, sub.du)
        local = np.einsum("bkd,bid->bik", gain, dx)
        out.append(local + np.einsum("if,bfk->bik", sub.alpha, ubar_s))
    return out


def deep_project(field: AgentField, m: TeamModel) -> DeepVector:
    """
    Deep state (or deep action) of an agent field.

    Component (s, j) equals (1/n(s)) sum_i alpha^{ij}(s) v^i.
    """
    return deep_project_batch([np.asarray(v, dtype=float)[None] for v in field], m)[0]


def gauge_residual(field: AgentField, m: TeamModel) -> AgentField:
    """Δv^i = v^i - sum_j alpha^{ij}(s) v̄^j(s) per agent."""
    return [r[0] for r in gauge_residual_batch([np.asarray(v, dtype=float)[None] for v in field], m)]


def expand_policy(p: Policy, x: AgentField, xbar: DeepVector, m: TeamModel) -> AgentField:
    """Apply the policy's gains exactly as stored (u = theta x convention) to every agent."""
    p.check_shapes(m)
    actions = expand_policy_batch(
        [g[None] for g in p.theta],
        p.theta_bar[None],
        [np.asarray(v, dtype=float)[None] for v in x],
        np.asarray(xbar, dtype=float)[None],
        m,
    )
    return [u[0] for u in actions]


def noise_covariances(
    m: TeamModel,
    s: int,
    kind: Literal["residual", "deep", "cross"],
    first: int,
    second: int,
) -> np.ndarray:
    """
    Exact covariance between noise components of sub-population s.

    kind="residual": E[Δw^first Δw^second'] for agents first, second.
    kind="deep": E[w̄^first w̄^second'] for features first, second.
    kind="cross": E[Δw^first w̄^second'] (agent first, feature second), always zero.
    """
    if not 0 <= s < len(m.subs):
        raise GaugeIndexError(f"sub-population {s} out of range")
    sub = m.subs[s]
    limits = {"residual": (sub.n, sub.n), "deep": (sub.f, sub.f), "cross": (sub.n, sub.f)}
    if kind not in limits:
        raise ValueError(f"unknown covariance kind {kind!r}")
    n_first, n_second = limits[kind]
    if not (0 <= first < n_first and 0 <= second < n_second):
        raise GaugeIndexError(f"indices ({first}, {second}) out of range for {kind} covariance of sub {s}")

    if kind == "residual":
        overlap = float(sub.alpha[first] @ sub.alpha[second]) / sub.n
        weight = 1.0 - overlap if first == second else -overlap
        return weight * sub.sigma_w
    if kind == "deep":
        return sub.sigma_w / sub.n if first == second else np.zeros_like(sub.sigma_w)
    return np.zeros_like(sub.sigma_w)


def team_cost_batch(
    m: TeamModel,
    x: Sequence[np.ndarray],
    u: Sequence[np.ndarray],
    xbar: np.ndarray,
    ubar: np.ndarray,
) -> np.ndarray:
    """Team cost of a batch of joint states/actions, one value per batch entry."""
    total = np.einsum("bi,ij,bj->b", xbar, m.qbar_cross, xbar)
    total = total + np.einsum("bi,ij,bj->b", ubar, m.rbar_cross, ubar)
    for sub, xs, us in zip(m.subs, x, u):
        local = np.einsum("bid,de,bie->b", xs, sub.Q, xs) + np.einsum("bik,kl,bil->b", us, sub.R, us)
        total = total + (sub.mu / sub.n) * local
    return total


def team_cost(m: TeamModel, x: AgentField, u: AgentField) -> float:
    """Social-welfare cost: sum_s (mu/n) sum_i c^i with the deep-state terms of every agent folded in."""
    xb = [np.asarray(v, dtype=float)[None] for v in x]
    ub = [np.asarray(v, dtype=float)[None] for v in u]
    return float(team_cost_batch(m, xb, ub, deep_project_batch(xb, m), deep_project_batch(ub, m))[0])


def reformulated_cost(m: TeamModel, x: AgentField, u: AgentField,
                      agg: Optional[AggregatedModel] = None) -> float:
    """The same team cost written through the gauge: deep quadratic forms plus residual quadratic forms."""
    agg = agg or aggregate(m)
    xbar, ubar = deep_project(x, m), deep_project(u, m)
    total = float(xbar @ agg.Q_bold @ xbar + ubar @ agg.R_bold @ ubar)
    for sub, dx, du in zip(m.subs, gauge_residual(x, m), gauge_residual(u, m)):
        local = np.einsum("id,de,ie->", dx, sub.Q, dx) + np.einsum("ik,kl,il->", du, sub.R, du)
        total += (sub.mu / sub.n) * float(local)
    return total
