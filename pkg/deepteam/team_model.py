"""
Validation and aggregation of deep structured team models.

The gauge transformation splits a team into one residual subsystem per
sub-population and a single deep-state subsystem. `aggregate` builds the
matrices of all of them; everything downstream works on `LQBlock`s.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionMismatch, InvalidModel
from .models import TeamModel, ValidationIssue, ValidationReport

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-9
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class LQBlock:
    """
    One decoupled linear-quadratic subsystem x+ = A x + B u + w with stage cost x'Qx + u'Ru.

    `risk_noise` is the W entering I - 2*lambda*W*P; `multiplicity` is how many
    independent copies of that noise the block's objective counts, so the
    risk-neutral cost of a gain is multiplicity * tr(P W).
    """
    name: str
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    risk_noise: np.ndarray
    multiplicity: float

    @property
    def dx(self) -> int:
        return int(self.A.shape[0])

    @property
    def du(self) -> int:
        return int(self.B.shape[1])


@dataclass(frozen=True)
class AggregatedModel:
    """Deep-state block matrices plus the per-sub-population residual blocks."""
    A_bold: np.ndarray
    B_bold: np.ndarray
    Q_bold: np.ndarray
    R_bold: np.ndarray
    sigma_w_bold: np.ndarray
    delta_blocks: tuple[LQBlock, ...]
    deep_block: LQBlock

    def blocks(self) -> list[LQBlock]:
        """Residual blocks in sub-population order, deep block last (same order as Policy.blocks())."""
        return [*self.delta_blocks, self.deep_block]


class FeatureSlot(NamedTuple):
    """Where feature j of sub-population s lives inside the deep state and deep action."""
    sub: int
    feature: int
    x: slice
    u: slice


def feature_slots(m: TeamModel) -> list[FeatureSlot]:
    """Deep-vector layout: sub-populations in declaration order, features in index order."""
    slots = []
    x_start = u_start = 0
    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            slots.append(FeatureSlot(s, j, slice(x_start, x_start + sub.dx), slice(u_start, u_start + sub.du)))
            x_start += sub.dx
            u_start += sub.du
    return slots


def deep_dims(m: TeamModel) -> tuple[int, int]:
    """(Dx, Du): sizes of the deep state and deep action."""
    return m.Dx, m.Du


def sub_slices(m: TeamModel) -> list[tuple[slice, slice]]:
    """(state, action) slices of each whole sub-population inside the deep vectors."""
    out = []
    x_start = u_start = 0
    for sub in m.subs:
        out.append((slice(x_start, x_start + sub.f * sub.dx), slice(u_start, u_start + sub.f * sub.du)))
        x_start += sub.f * sub.dx
        u_start += sub.f * sub.du
    return out


def _dimension_issues(m: TeamModel) -> list[ValidationIssue]:
    issues = []
    Dx, Du = deep_dims(m)

    def expect(name: str, arr: np.ndarray, shape: tuple, s=None):
        if arr.shape != shape:
            issues.append(ValidationIssue(
                code="DIMENSION",
                message=f"{name}: expected shape {shape}, got {arr.shape}",
                sub=s,
            ))

    for s, sub in enumerate(m.subs):
        dx, du = sub.A.shape[0], sub.B.shape[1]
        expect(f"subs[{s}].A", sub.A, (dx, dx), s)
        expect(f"subs[{s}].B", sub.B, (dx, du), s)
        expect(f"subs[{s}].Q", sub.Q, (dx, dx), s)
        expect(f"subs[{s}].R", sub.R, (du, du), s)
        expect(f"subs[{s}].sigma_x", sub.sigma_x, (dx, dx), s)
        expect(f"subs[{s}].sigma_w", sub.sigma_w, (dx, dx), s)
        expect(f"subs[{s}].alpha", sub.alpha, (sub.n, sub.f), s)
        for label, mats, cols in (("A_bar", sub.A_bar, Dx), ("B_bar", sub.B_bar, Du)):
            if len(mats) != sub.f:
                issues.append(ValidationIssue(
                    code="DIMENSION",
                    message=f"subs[{s}].{label}: expected {sub.f} feature matrices, got {len(mats)}",
                    sub=s,
                ))
                continue
            for j, mat in enumerate(mats):
                expect(f"subs[{s}].{label}[{j}]", mat, (dx, cols), s)
    expect("qbar_cross", m.qbar_cross, (Dx, Dx))
    expect("rbar_cross", m.rbar_cross, (Du, Du))
    return issues


def _definiteness_issue(name: str, mat: np.ndarray, strict: bool, s=None) -> list[ValidationIssue]:
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL * scale:
        return [ValidationIssue(code="NOT_SYMMETRIC", message=f"{name} is not symmetric", sub=s)]
    low = float(np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))))
    if strict and low <= 1e-12 * scale:
        return [ValidationIssue(code="NOT_PD", message=f"{name} is not positive definite (min eig {low:.3g})",
                                sub=s, value=low)]
    if not strict and low < -1e-12 * scale:
        return [ValidationIssue(code="NOT_PSD", message=f"{name} is not positive semidefinite (min eig {low:.3g})",
                                sub=s, value=low)]
    return []


def validate_model(m: TeamModel) -> ValidationReport:
    """
    Check every model invariant and report all violations.

    Covers shapes, orthonormality of the influence factors under the
    empirical inner product (1/n) sum_i alpha_ij alpha_ij', and the
    convexity conditions on the local and aggregated cost matrices.
    """
    issues = _dimension_issues(m)
    if issues:
        return ValidationReport(issues=issues)

    for s, sub in enumerate(m.subs):
        gram = sub.alpha.T @ sub.alpha / sub.n
        residual = np.abs(gram - np.eye(sub.f))
        for j in range(sub.f):
            for k in range(j, sub.f):
                if residual[j, k] > ORTHOGONALITY_TOL:
                    issues.append(ValidationIssue(
                        code="ALPHA_ORTHOGONALITY",
                        message=f"subs[{s}].alpha features ({j},{k}): residual {residual[j, k]:.3g}",
                        sub=s,
                        value=float(residual[j, k]),
                    ))
        issues += _definiteness_issue(f"subs[{s}].Q", sub.Q, strict=False, s=s)
        issues += _definiteness_issue(f"subs[{s}].R", sub.R, strict=True, s=s)
        issues += _definiteness_issue(f"subs[{s}].sigma_x", sub.sigma_x, strict=True, s=s)
        issues += _definiteness_issue(f"subs[{s}].sigma_w", sub.sigma_w, strict=True, s=s)

    cross = _definiteness_issue("qbar_cross", m.qbar_cross, strict=False)
    cross += _definiteness_issue("rbar_cross", m.rbar_cross, strict=False)
    issues += [issue for issue in cross if issue.code == "NOT_SYMMETRIC"]
    if not any(issue.code == "NOT_SYMMETRIC" for issue in cross):
        agg = _assemble(m)
        issues += _definiteness_issue("Q_bold", agg.Q_bold, strict=False)
        issues += _definiteness_issue("R_bold", agg.R_bold, strict=True)

    if issues:
        logger.debug("model validation found %d issue(s)", len(issues))
    return ValidationReport(issues=issues)


def require_valid(m: TeamModel) -> None:
    report = validate_model(m)
    if not report.is_valid:
        raise InvalidModel(report)


def _assemble(m: TeamModel) -> AggregatedModel:
    Dx, Du = deep_dims(m)
    A_bold = np.zeros((Dx, Dx))
    B_bold = np.zeros((Dx, Du))
    q_diag, r_diag, w_diag = [], [], []
    for slot in feature_slots(m):
        sub = m.subs[slot.sub]
        A_bold[slot.x, :] += sub.A_bar[slot.feature]
        A_bold[slot.x, slot.x] += sub.A
        B_bold[slot.x, :] += sub.B_bar[slot.feature]
        B_bold[slot.x, slot.u] += sub.B
        q_diag.append(sub.mu * sub.Q)
        r_diag.append(sub.mu * sub.R)
        w_diag.append(sub.sigma_w / sub.n)
    Q_bold = block_diag(*q_diag) + m.qbar_cross
    R_bold = block_diag(*r_diag) + m.rbar_cross
    Q_bold = 0.5 * (Q_bold + Q_bold.T)
    R_bold = 0.5 * (R_bold + R_bold.T)
    sigma_w_bold = block_diag(*w_diag)

    delta_blocks = tuple(
        LQBlock(
            name=f"delta[{s}]",
            A=sub.A, B=sub.B, Q=sub.Q, R=sub.R,
            risk_noise=(sub.mu / sub.n) * sub.sigma_w,
            multiplicity=float(sub.n - sub.f),
        )
        for s, sub in enumerate(m.subs)
    )
    deep_block = LQBlock(
        name="deep",
        A=A_bold, B=B_bold, Q=Q_bold, R=R_bold,
        risk_noise=sigma_w_bold,
        multiplicity=1.0,
    )
    return AggregatedModel(A_bold, B_bold, Q_bold, R_bold, sigma_w_bold, delta_blocks, deep_block)


def aggregate(m: TeamModel) -> AggregatedModel:
    """
    Build the deep-state matrices and the residual blocks.

    Raises:
        DimensionMismatch: naming the first block with a wrong shape
    """
    issues = _dimension_issues(m)
    if issues:
        block, _, detail = issues[0].message.partition(": ")
        raise DimensionMismatch(block, detail=detail)
    return _assemble(m)


def is_weakly_coupled(m: TeamModel) -> bool:
    """True iff every coupling term acts only on its own feature, so the deep Riccati equation decomposes."""
    slots = feature_slots(m)
    by_key = {(slot.sub, slot.feature): slot for slot in slots}

    def only_on_diagonal(mat: np.ndarray, keep: slice) -> bool:
        rest = mat.copy()
        rest[:, keep] = 0.0
        return bool(np.all(np.abs(rest) <= 1e-14))

    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            slot = by_key[(s, j)]
            if not only_on_diagonal(sub.A_bar[j], slot.x) or not only_on_diagonal(sub.B_bar[j], slot.u):
                return False

    def block_diagonal(mat: np.ndarray, attr: str) -> bool:
        mask = np.zeros(mat.shape, dtype=bool)
        for slot in slots:
            sl = getattr(slot, attr)
            mask[sl, sl] = True
        return bool(np.all(np.abs(mat[~mask]) <= 1e-14))

    return block_diagonal(m.qbar_cross, "x") and block_diagonal(m.rbar_cross, "u")
