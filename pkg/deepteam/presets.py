"""
Built-in experiment presets reproducing the two worked examples.
"""
import math
from dataclasses import dataclass
from typing import Callable

from .errors import ConfigError
from .models import InitMode, InitPolicy, Mode, TeamModel


@dataclass(frozen=True)
class PresetDefaults:
    """Experiment parameters used when the CLI/API does not override them."""
    mode: Mode
    eta: float
    iters: int
    samples_L: int
    rollout_T: int
    radius_r: float
    seeds_count: int
    init_policy: InitPolicy
    init_mode: InitMode
    init_radius: float
    antithetic: bool
    backtracking: bool


def _scalar_team(n: int, alpha: list[float], A: float, B: float, Q: float, R: float,
                 Qbar: float, Rbar: float, sigma_w: float, sigma_x: float, risk_factor: float) -> TeamModel:
    """One sub-population, one feature, scalar dynamics, no dynamic coupling."""
    return TeamModel(
        subs=[{
            "n": n, "f": 1,
            "A": A, "B": B, "A_bar": [0.0], "B_bar": [0.0],
            "Q": Q, "R": R, "mu": 1.0,
            "sigma_x": sigma_x, "sigma_w": sigma_w,
            "alpha": alpha,
        }],
        qbar_cross=Qbar,
        rbar_cross=Rbar,
        risk_factor=risk_factor,
    )


def example1_model() -> TeamModel:
    """Ten agents, risk-sensitive (lambda = 0.1), heterogeneous influence factors."""
    alpha = [math.sqrt(0.5)] * 6 + [math.sqrt(1.5), 1.0, math.sqrt(2.0), math.sqrt(2.5)]
    return _scalar_team(10, alpha, A=0.9, B=0.4, Q=1.0, R=1.0, Qbar=2.0, Rbar=1.0,
                        sigma_w=0.1, sigma_x=0.1, risk_factor=0.1)


def example2_model() -> TeamModel:
    """Ten agents, risk-neutral, one dominant agent; initial states are uniform on [0, 0.1]."""
    alpha = [math.sqrt(0.1)] * 9 + [math.sqrt(9.1)]
    return _scalar_team(10, alpha, A=1.0, B=1.0, Q=1.0, R=2.0, Qbar=2.0, Rbar=1.0,
                        sigma_w=0.02, sigma_x=0.1 ** 2 / 12, risk_factor=0.0)


PRESETS: dict[str, tuple[Callable[[], TeamModel], PresetDefaults]] = {
    "example1": (example1_model, PresetDefaults(
        mode=Mode.PG, eta=5.0, iters=2000, samples_L=100, rollout_T=10, radius_r=0.05,
        seeds_count=1, init_policy=InitPolicy.ZERO, init_mode=InitMode.GAUSSIAN, init_radius=0.3, antithetic=False, backtracking=True,
    )),
    "example2": (example2_model, PresetDefaults(
        mode=Mode.ZO_PG, eta=0.2, iters=400, samples_L=100, rollout_T=10, radius_r=0.05,
        seeds_count=10, init_policy=InitPolicy.RANDOM, init_mode=InitMode.UNIFORM, init_radius=0.3, antithetic=True, backtracking=True,
    )),
}

GENERIC_DEFAULTS = PresetDefaults(
    mode=Mode.RICCATI, eta=0.01, iters=1000, samples_L=100, rollout_T=10, radius_r=0.05,
    seeds_count=1, init_policy=InitPolicy.ZERO, init_mode=InitMode.GAUSSIAN, init_radius=0.3, antithetic=False, backtracking=True,
)


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset_model(name: str) -> TeamModel:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}", field="preset")
    return PRESETS[name][0]()


def preset_defaults(name: str) -> PresetDefaults:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}", field="preset")
    return PRESETS[name][1]
