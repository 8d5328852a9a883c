"""
Pydantic models for team descriptions, policies, run traces and experiment configuration.
"""
from enum import Enum
from typing import Annotated, Any, Optional

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    model_validator,
)


def _finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite numbers")
    return arr


def _as_matrix(value: Any) -> np.ndarray:
    """Coerce a scalar, a flat list (one row) or a nested list into a 2-D float array."""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got an array with {arr.ndim} dimensions")
    return _finite(arr)


def _as_alpha(value: Any) -> np.ndarray:
    """Influence factors: a flat list means one feature, i.e. a single column."""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"alpha must be an n x f matrix, got {arr.ndim} dimensions")
    return _finite(arr)


def _to_nested_list(arr: np.ndarray) -> list:
    return arr.tolist()


_MATRIX_SCHEMA = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

Matrix = Annotated[
    np.ndarray,
    BeforeValidator(_as_matrix),
    PlainSerializer(_to_nested_list, return_type=list),
    WithJsonSchema(_MATRIX_SCHEMA),
]
AlphaMatrix = Annotated[
    np.ndarray,
    BeforeValidator(_as_alpha),
    PlainSerializer(_to_nested_list, return_type=list),
    WithJsonSchema(_MATRIX_SCHEMA),
]

_ARRAY_MODEL = ConfigDict(arbitrary_types_allowed=True, frozen=True, extra="forbid")


class Mode(str, Enum):
    """What an experiment run does."""
    RICCATI = "riccati"
    PG = "pg"
    NPG = "npg"
    ZO_PG = "zo-pg"
    ZO_NPG = "zo-npg"
    SIMULATE = "simulate"

    @property
    def is_zeroth_order(self) -> bool:
        return self in (Mode.ZO_PG, Mode.ZO_NPG)

    @property
    def algo(self) -> str:
        return "npg" if self in (Mode.NPG, Mode.ZO_NPG) else "pg"


class InitPolicy(str, Enum):
    """How the starting policy of an optimizer is chosen."""
    ZERO = "zero"
    RANDOM = "random"
    FILE = "file"


class InitMode(str, Enum):
    """Distribution of the initial agent states."""
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class ObjectiveMode(str, Enum):
    RISK_NEUTRAL = "risk-neutral"
    RISK_SENSITIVE = "risk-sensitive"


class SubPopulationSpec(BaseModel):
    """One homogeneous sub-population of agents with its dynamics, cost and influence factors."""
    model_config = _ARRAY_MODEL

    n: int = Field(..., gt=0, description="Number of agents")
    f: int = Field(..., gt=0, description="Number of features (deep states)")
    A: Matrix = Field(..., description="Local state matrix, dx x dx")
    B: Matrix = Field(..., description="Local input matrix, dx x du")
    A_bar: list[Matrix] = Field(..., description="Per-feature coupling to the full deep state, each dx x Dx")
    B_bar: list[Matrix] = Field(..., description="Per-feature coupling to the full deep action, each dx x Du")
    Q: Matrix = Field(..., description="State cost, symmetric PSD")
    R: Matrix = Field(..., description="Action cost, symmetric PD")
    mu: float = Field(default=1.0, gt=0, description="Sub-population cost weight")
    sigma_x: Matrix = Field(..., description="Initial-state covariance, symmetric PD")
    sigma_w: Matrix = Field(..., description="Process-noise covariance, symmetric PD")
    alpha: AlphaMatrix = Field(..., description="Influence factors, n x f")

    @property
    def dx(self) -> int:
        return int(self.A.shape[0])

    @property
    def du(self) -> int:
        return int(self.B.shape[1])


class TeamModel(BaseModel):
    """A deep structured linear-quadratic team."""
    model_config = _ARRAY_MODEL

    subs: list[SubPopulationSpec] = Field(..., min_length=1, description="Sub-populations in declaration order")
    qbar_cross: Matrix = Field(..., description="Summed mu(s)*Qbar(s) deep-state cost, Dx x Dx")
    rbar_cross: Matrix = Field(..., description="Summed mu(s)*Rbar(s) deep-action cost, Du x Du")
    risk_factor: float = Field(..., ge=0, description="Risk factor lambda; 0 is risk-neutral")

    @property
    def Dx(self) -> int:
        return sum(sub.f * sub.dx for sub in self.subs)

    @property
    def Du(self) -> int:
        return sum(sub.f * sub.du for sub in self.subs)

    def with_risk_factor(self, risk_factor: float) -> "TeamModel":
        return self.model_copy(update={"risk_factor": float(risk_factor)})


class Policy(BaseModel):
    """Stationary team strategy: local gains per sub-population plus one deep gain (u = theta x)."""
    model_config = _ARRAY_MODEL

    theta: list[Matrix] = Field(..., description="Local gain per sub-population, du(s) x dx(s)")
    theta_bar: Matrix = Field(..., description="Deep gain, Du x Dx")

    @classmethod
    def zeros(cls, model: TeamModel) -> "Policy":
        return cls(
            theta=[np.zeros((sub.du, sub.dx)) for sub in model.subs],
            theta_bar=np.zeros((model.Du, model.Dx)),
        )

    @classmethod
    def from_blocks(cls, blocks: list[np.ndarray]) -> "Policy":
        """Inverse of blocks(): local gains first, deep gain last."""
        return cls(theta=list(blocks[:-1]), theta_bar=blocks[-1])

    def blocks(self) -> list[np.ndarray]:
        return [*self.theta, self.theta_bar]

    def distance(self, other: "Policy") -> float:
        """Frobenius distance over all blocks."""
        return float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(self.blocks(), other.blocks()))))

    def check_shapes(self, model: TeamModel) -> None:
        from .errors import DimensionMismatch

        if len(self.theta) != len(model.subs):
            raise DimensionMismatch("theta", (len(model.subs),), (len(self.theta),))
        for s, (gain, sub) in enumerate(zip(self.theta, model.subs)):
            if gain.shape != (sub.du, sub.dx):
                raise DimensionMismatch(f"theta[{s}]", (sub.du, sub.dx), gain.shape)
        if self.theta_bar.shape != (model.Du, model.Dx):
            raise DimensionMismatch("theta_bar", (model.Du, model.Dx), self.theta_bar.shape)


class ValidationIssue(BaseModel):
    """One violated model invariant."""
    code: str = Field(..., description="Machine-readable issue code, e.g. ALPHA_ORTHOGONALITY")
    message: str = Field(..., description="Human-readable description")
    sub: Optional[int] = Field(default=None, description="Offending sub-population index")
    value: Optional[float] = Field(default=None, description="Residual or eigenvalue behind the issue")


class ValidationReport(BaseModel):
    """All invariant violations found in a model; empty means valid."""
    issues: list[ValidationIssue] = Field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.issues

    def codes(self) -> list[str]:
        return [issue.code for issue in self.issues]


class RunTraceRow(BaseModel):
    """One optimizer iteration."""
    iteration: int
    cost: float = Field(..., description="J(theta_k), exact or estimated")
    gap: Optional[float] = Field(default=None, description="J(theta_k) - J(theta*) when the oracle is known")
    grad_norm: float
    gain_err: Optional[float] = Field(default=None, description="Frobenius distance to the oracle gains")
    rejected_samples: Optional[int] = None
    estimate_stderr: Optional[float] = None
    step_size: Optional[float] = Field(default=None, description="Accepted step size after backtracking")


class RunTrace(BaseModel):
    """Per-iteration record of an optimizer run and where it ended."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    algo: str
    rows: list[RunTraceRow] = Field(default_factory=list)
    final_policy: Policy
    converged: bool = False
    halted_reason: Optional[str] = Field(default=None, description="Set when the run stopped early")
    seed: Optional[int] = None

    @property
    def iterations(self) -> int:
        """Number of updates applied."""
        return max(len(self.rows) - 1, 0)


class ObjectiveEstimate(BaseModel):
    """Monte-Carlo estimate of the team objective."""
    value: float
    stderr: float = Field(..., ge=0)
    mode: ObjectiveMode
    horizon: int = Field(..., ge=1)
    seed_count: int = Field(..., ge=1)
    approximation: Optional[float] = Field(
        default=None, description="Mean + (lambda/2T) Var small-risk approximation (risk-sensitive only)"
    )


class ExperimentConfig(BaseModel):
    """Everything one CLI/API experiment needs; unset fields are filled from the preset."""
    model_config = ConfigDict(extra="forbid")

    preset: Optional[str] = Field(default=None, description="Built-in model name: example1 or example2")
    model_path: Optional[str] = Field(default=None, description="YAML model file")
    mode: Optional[Mode] = None
    eta: Optional[float] = Field(default=None, gt=0)
    iters: Optional[int] = Field(default=None, ge=0)
    tol: float = Field(default=1e-10, ge=0)
    samples_L: Optional[int] = Field(default=None, ge=1)
    rollout_T: Optional[int] = Field(default=None, ge=1)
    radius_r: Optional[float] = Field(default=None, gt=0)
    risk_factor: Optional[float] = Field(default=None, ge=0, description="Overrides the model's lambda")
    seed: int = Field(default=0, ge=0)
    seeds_count: Optional[int] = Field(default=None, ge=1)
    out: Optional[str] = Field(default=None, description="Artifact directory")
    init_policy: Optional[InitPolicy] = None
    init_radius: Optional[float] = Field(default=None, gt=0)
    policy_file: Optional[str] = None
    init_mode: Optional[InitMode] = None
    backtracking: Optional[bool] = None
    antithetic: Optional[bool] = None
    export_trajectory: bool = False

    @model_validator(mode="after")
    def _check_source(self) -> "ExperimentConfig":
        if (self.preset is None) == (self.model_path is None):
            raise ValueError("exactly one of preset or model_path must be given")
        if self.init_policy == InitPolicy.FILE and not self.policy_file:
            raise ValueError("init_policy=file requires policy_file")
        if self.mode is not None and self.mode.is_zeroth_order and (self.risk_factor or 0.0) > 0:
            raise ValueError(f"mode {self.mode.value} is risk-neutral only; lambda must be 0")
        return self


class SeedOutcome(BaseModel):
    """Result of one seeded optimizer or simulation run."""
    seed: int
    final_cost: Optional[float] = None
    gain_error: Optional[float] = None
    initial_gain_error: Optional[float] = None
    iterations: int = 0
    halted_reason: Optional[str] = None
    trace: Optional[RunTrace] = None


class ExperimentResult(BaseModel):
    """Summary of a whole experiment, as written to summary.txt and returned by the API."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: Mode
    risk_factor: float
    oracle: Optional[Policy] = Field(default=None, description="Riccati optimal policy, u = theta x convention")
    oracle_cost: Optional[float] = None
    outcomes: list[SeedOutcome] = Field(default_factory=list)
    wall_time: float = 0.0
    exit_code: int = 0
    message: str = ""
    artifacts: list[str] = Field(default_factory=list)


class RiccatiRequest(BaseModel):
    """Request model for solving the deep Riccati equations of a preset or inline model."""
    preset: Optional[str] = Field(default=None, description="Built-in model name")
    model: Optional[TeamModel] = Field(default=None, description="Inline team model")
    risk_factor: Optional[float] = Field(default=None, ge=0, description="Overrides the model's lambda")

    @model_validator(mode="after")
    def _check_source(self) -> "RiccatiRequest":
        if (self.preset is None) == (self.model is None):
            raise ValueError("exactly one of preset or model must be given")
        return self


class RiccatiResponse(BaseModel):
    """Optimal team strategy and its value matrices."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    risk_factor: float
    policy: Policy = Field(..., description="Optimal gains in the u = theta x convention")
    P: list[Matrix] = Field(..., description="Residual-block Riccati solutions")
    P_bold: Matrix = Field(..., description="Deep-block Riccati solution")
    cost: float = Field(..., description="Optimal team objective")
    iterations: int
    residual: float
