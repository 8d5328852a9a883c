"""
Tests for n-agent rollouts and Monte-Carlo objective estimates.
"""
import csv

import numpy as np
import pytest

from deepteam.errors import MGFOverflow, NumericOverflow
from deepteam.gauge import deep_project, gauge_residual
from deepteam.models import InitMode, Policy
from deepteam.policy_gradient import evaluate
from deepteam.riccati import optimal_policy, solve_team
from deepteam.simulator import (
    estimate_risk_neutral,
    estimate_risk_sensitive,
    export_trajectory_csv,
    horizon_bias_curve,
    rollout,
    rollout_batch,
)
from deepteam.team_model import aggregate


@pytest.fixture
def optimal2(example2):
    return optimal_policy(solve_team(example2))


def test_rollout_is_a_function_of_the_seed(example2, optimal2):
    """Same seed, same trajectory; another seed, another trajectory."""
    a = rollout(example2, optimal2, 20, seed=5)
    b = rollout(example2, optimal2, 20, seed=5)
    c = rollout(example2, optimal2, 20, seed=6)
    np.testing.assert_array_equal(a.costs, b.costs)
    np.testing.assert_array_equal(a.states[-1][0], b.states[-1][0])
    assert not np.array_equal(a.costs, c.costs)
    assert a.costs.shape == (20,)


def test_batch_matches_single_rollouts(example2, optimal2):
    """Batched rollouts reproduce the recorded single rollouts seed by seed."""
    seeds = [1, 2, 3]
    batch = rollout_batch(example2, [optimal2] * 3, seeds, 15)
    for k, seed in enumerate(seeds):
        np.testing.assert_allclose(batch.costs[k], rollout(example2, optimal2, 15, seed).costs)


def test_shared_seed_shares_noise(example2, optimal2):
    """Two rollouts with one seed see identical noise, so equal policies give equal costs."""
    other = Policy(theta=[optimal2.theta[0] * 0.9], theta_bar=optimal2.theta_bar)
    batch = rollout_batch(example2, [optimal2, optimal2, other], [9, 9, 9], 10)
    np.testing.assert_array_equal(batch.costs[0], batch.costs[1])
    assert not np.array_equal(batch.costs[0], batch.costs[2])


def test_deep_state_dynamics(random_team):
    """x̄_{t+1} = A_bold x̄_t + B_bold ū_t + w̄_t along a simulated trajectory."""
    model = random_team(13)
    p = optimal_policy(solve_team(model))
    agg = aggregate(model)
    traj = rollout(model, p, 8, seed=3)
    for t in range(7):
        xbar = deep_project(traj.states[t], model)
        ubar = deep_project(traj.actions[t], model)
        wbar = deep_project(traj.noises[t], model)
        expected = agg.A_bold @ xbar + agg.B_bold @ ubar + wbar
        np.testing.assert_allclose(deep_project(traj.states[t + 1], model), expected, atol=1e-10)


def test_residual_dynamics(random_team):
    """Δx_{t+1} = A Δx_t + B Δu_t + Δw_t per agent: the coupling terms live entirely in the deep state."""
    model = random_team(14, subs=2, max_features=2)
    p = optimal_policy(solve_team(model))
    traj = rollout(model, p, 8, seed=2)
    for t in range(7):
        dx = gauge_residual(traj.states[t], model)
        du = gauge_residual(traj.actions[t], model)
        dw = gauge_residual(traj.noises[t], model)
        nxt = gauge_residual(traj.states[t + 1], model)
        for sub, x, u, w, x_next in zip(model.subs, dx, du, dw, nxt):
            np.testing.assert_allclose(x_next, x @ sub.A.T + u @ sub.B.T + w, atol=1e-10)


def test_noise_free_rollout_from_fixed_state(example2, optimal2):
    """Without noise the deep state contracts by 1 - 0.618 each step."""
    x0 = [np.full((10, 1), 0.05)]
    traj = rollout(example2, optimal2, 5, seed=0, noise=False, x0=x0)
    xbar = [deep_project(s, example2)[0] for s in traj.states]
    ratios = np.array(xbar[1:]) / np.array(xbar[:-1])
    np.testing.assert_allclose(ratios, 1 - 0.6180339887, rtol=1e-6)


def test_unstable_policy_overflows(example2):
    """Divergent closed loops are flagged with the step at which the norm passed 1e12."""
    bad = Policy(theta=[np.array([[5.0]])], theta_bar=np.array([[5.0]]))
    with pytest.raises(NumericOverflow) as excinfo:
        rollout(example2, bad, 100, seed=0)
    assert 0 < excinfo.value.step < 100

    batch = rollout_batch(example2, [bad], [0], 100)
    assert not batch.stable[0]
    assert np.isinf(batch.totals[0])


def test_uniform_initial_states_lie_in_bounds(example2, optimal2):
    traj = rollout(example2, optimal2, 1, seed=4, init_mode=InitMode.UNIFORM)
    x0 = traj.states[0][0]
    assert np.all((x0 >= 0.0) & (x0 <= 0.1))


def test_risk_neutral_estimate_matches_exact_cost(example2, optimal2):
    """Long-horizon averages approach the exact stationary cost."""
    exact = evaluate(example2, optimal2).cost
    est = estimate_risk_neutral(example2, optimal2, 2000, range(20))
    assert est.seed_count == 20
    assert abs(est.value - exact) < 5 * est.stderr + 0.02 * exact


def test_empirical_correlations_match_state_covariance(example2, optimal2):
    """Time-averaged x̄x̄' approaches the deep-block state correlation."""
    batch = rollout_batch(example2, [optimal2] * 50, list(range(50)), 2000, track_correlations=True)
    sigma = evaluate(example2, optimal2).Sigma_bold
    measured = batch.correlations[-1].mean(axis=0)
    np.testing.assert_allclose(measured, sigma, rtol=0.05)


def test_risk_sensitive_estimate_dominates_mean(example1):
    """log-mean-exp is never below the mean, and the small-risk approximation sits close to it."""
    p = optimal_policy(solve_team(example1))
    est = estimate_risk_sensitive(example1, p, 50, range(200), 0.1)
    mean = estimate_risk_neutral(example1, p, 50, range(200)).value
    assert est.value >= mean
    assert est.approximation == pytest.approx(est.value, rel=0.05)
    assert est.stderr > 0


def test_mgf_overflow(example1):
    """lambda times a cost sum that leaves double range cannot be averaged."""
    p = optimal_policy(solve_team(example1))
    with pytest.raises(MGFOverflow):
        estimate_risk_sensitive(example1, p, 100, range(50), 1e308)


def test_wide_exponent_spread_is_still_estimated(example1):
    """A large lambda spreads the exponents far apart; the log-mean-exp stays between the mean and the max."""
    p = optimal_policy(solve_team(example1))
    T = 100
    est = estimate_risk_sensitive(example1, p, T, range(50), 1e3)
    totals = rollout_batch(example1, [p] * 50, list(range(50)), T).totals
    assert np.isfinite(est.value)
    assert np.mean(totals) / T <= est.value <= np.max(totals) / T + 1e-12


def test_small_risk_factor_matches_risk_neutral_estimate(example1):
    """As lambda goes to 0 the risk-sensitive estimate approaches the risk-neutral one."""
    p = optimal_policy(solve_team(example1))
    neutral = estimate_risk_neutral(example1, p, 50, range(100)).value
    tiny = estimate_risk_sensitive(example1, p, 50, range(100), 1e-6).value
    assert tiny == pytest.approx(neutral, rel=1e-3)
    assert tiny >= neutral - 1e-9


def test_identical_samples_give_exact_risk_sensitive_value(example1):
    """With every sample on one seed the cost is deterministic and log-mean-exp returns it exactly."""
    p = optimal_policy(solve_team(example1))
    T = 30
    total = rollout(example1, p, T, seed=7).costs.sum()
    est = estimate_risk_sensitive(example1, p, T, [7] * 8, 0.1)
    assert est.value == pytest.approx(total / T, rel=1e-9)
    assert est.approximation == pytest.approx(total / T, rel=1e-9)
    assert est.stderr == 0.0


def test_horizon_bias_shrinks(example2, optimal2):
    """|J̃_T/T - J| decreases as the horizon grows."""
    exact = evaluate(example2, optimal2).cost
    curve = horizon_bias_curve(example2, optimal2, [5, 10, 20, 40], range(2000), exact,
                               init_mode=InitMode.UNIFORM)
    assert [T for T, _, _ in curve] == [5, 10, 20, 40]
    assert curve[-1][1] < curve[0][1]


def test_export_trajectory_csv(example2, optimal2, tmp_path):
    traj = rollout(example2, optimal2, 3, seed=0)
    path = export_trajectory_csv(traj, example2, tmp_path / "traj.csv")
    with path.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["t", "sub", "agent", "x0", "u0", "cbar"]
    assert len(rows) == 1 + 3 * 10
    assert float(rows[1][-1]) == pytest.approx(traj.costs[0])
