"""
Shared fixtures: the two preset models and a factory for random valid teams.
"""
import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from deepteam.models import TeamModel
from deepteam.presets import example1_model, example2_model


def _orthonormal_alpha(rng: np.random.Generator, n: int, f: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, f)))
    return np.sqrt(n) * q[:, :f]


def _pd(rng: np.random.Generator, d: int, floor: float) -> np.ndarray:
    g = rng.standard_normal((d, d))
    return 0.5 * g @ g.T / d + floor * np.eye(d)


def make_random_team(
    seed: int,
    subs: int = 2,
    max_features: int = 2,
    max_dx: int = 3,
    max_du: int = 3,
    weakly_coupled: bool = False,
    risk_factor: float = 0.0,
) -> TeamModel:
    """A valid random team with stabilizable dynamics and small coupling."""
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(subs):
        f = int(rng.integers(1, max_features + 1))
        shapes.append((int(rng.integers(f + 1, f + 5)), f, int(rng.integers(1, max_dx + 1)),
                       int(rng.integers(1, max_du + 1))))
    Dx = sum(f * dx for _, f, dx, _ in shapes)
    Du = sum(f * du for _, f, _, du in shapes)

    specs = []
    x_start = u_start = 0
    x_slots, u_slots = [], []
    for n, f, dx, du in shapes:
        A_bar, B_bar = [], []
        for _ in range(f):
            a = 0.1 * rng.standard_normal((dx, Dx))
            b = 0.1 * rng.standard_normal((dx, Du))
            if weakly_coupled:
                mask_a = np.zeros_like(a)
                mask_a[:, x_start:x_start + dx] = 1.0
                mask_b = np.zeros_like(b)
                mask_b[:, u_start:u_start + du] = 1.0
                a, b = a * mask_a, b * mask_b
            A_bar.append(a.tolist())
            B_bar.append(b.tolist())
            x_slots.append(slice(x_start, x_start + dx))
            u_slots.append(slice(u_start, u_start + du))
            x_start += dx
            u_start += du
        specs.append({
            "n": n, "f": f,
            "A": (0.6 * rng.standard_normal((dx, dx))).tolist(),
            "B": rng.standard_normal((dx, du)).tolist(),
            "A_bar": A_bar, "B_bar": B_bar,
            "Q": _pd(rng, dx, 0.1).tolist(),
            "R": _pd(rng, du, 0.5).tolist(),
            "mu": float(rng.uniform(0.5, 2.0)),
            "sigma_x": (0.1 * _pd(rng, dx, 0.1)).tolist(),
            "sigma_w": (0.1 * _pd(rng, dx, 0.1)).tolist(),
            "alpha": _orthonormal_alpha(rng, n, f).tolist(),
        })

    qbar = 0.5 * _pd(rng, Dx, 0.0)
    rbar = 0.5 * _pd(rng, Du, 0.0)
    if weakly_coupled:
        keep_q = np.zeros_like(qbar, dtype=bool)
        for sl in x_slots:
            keep_q[sl, sl] = True
        keep_r = np.zeros_like(rbar, dtype=bool)
        for sl in u_slots:
            keep_r[sl, sl] = True
        qbar = np.where(keep_q, qbar, 0.0)
        rbar = np.where(keep_r, rbar, 0.0)
    return TeamModel(subs=specs, qbar_cross=qbar.tolist(), rbar_cross=rbar.tolist(), risk_factor=risk_factor)


def make_single_agent(risk_factor: float = 0.0) -> TeamModel:
    """n = f = 1 with alpha = 1: the deep state is the agent itself and the residual block is empty."""
    return TeamModel(
        subs=[{
            "n": 1, "f": 1,
            "A": [[0.9]], "B": [[0.5]],
            "A_bar": [[[0.2]]], "B_bar": [[[0.1]]],
            "Q": [[1.0]], "R": [[1.0]], "mu": 2.0,
            "sigma_x": [[0.1]], "sigma_w": [[0.05]],
            "alpha": [[1.0]],
        }],
        qbar_cross=[[0.5]],
        rbar_cross=[[0.3]],
        risk_factor=risk_factor,
    )


@pytest.fixture
def example1() -> TeamModel:
    return example1_model()


@pytest.fixture
def example2() -> TeamModel:
    return example2_model()


@pytest.fixture
def random_team():
    return make_random_team


@pytest.fixture
def single_agent() -> TeamModel:
    return make_single_agent()
