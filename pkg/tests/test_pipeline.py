"""
Tests for experiment resolution, initial policies and artifact writing.
"""
import csv

import numpy as np
import pytest
from pydantic import ValidationError

from deepteam.errors import ConfigError
from deepteam.model_file import dump_policy, write_model
from deepteam.models import ExperimentConfig, InitMode, InitPolicy, Mode
from deepteam.pipeline import initial_policy, random_stable_policy, resolve_config, run_experiment
from deepteam.policy_gradient import evaluate
from deepteam.riccati import optimal_policy, solve_team


def _read_csv(path):
    with path.open() as handle:
        return list(csv.reader(handle))


def test_preset_defaults_fill_unset_fields():
    model, cfg = resolve_config(ExperimentConfig(preset="example1"))
    assert cfg.mode == Mode.PG
    assert (cfg.eta, cfg.rollout_T, cfg.samples_L) == (5.0, 10, 100)
    assert cfg.risk_factor == pytest.approx(0.1)
    assert model.risk_factor == pytest.approx(0.1)

    _, cfg2 = resolve_config(ExperimentConfig(preset="example2", eta=0.05, seeds_count=2))
    assert cfg2.mode == Mode.ZO_PG
    assert cfg2.eta == 0.05
    assert cfg2.seeds_count == 2
    assert cfg2.init_mode == InitMode.UNIFORM
    assert cfg2.antithetic is True


def test_zeroth_order_with_risk_is_a_config_error():
    """Model-free modes are risk-neutral; example1 carries lambda = 0.1."""
    with pytest.raises(ConfigError) as excinfo:
        resolve_config(ExperimentConfig(preset="example1", mode="zo-pg"))
    assert excinfo.value.field == "lambda"
    _, cfg = resolve_config(ExperimentConfig(preset="example1", mode="zo-pg", risk_factor=0.0))
    assert cfg.risk_factor == 0.0


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="example1", model_path="x.yaml")
    with pytest.raises(ValidationError):
        ExperimentConfig()
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="example2", mode="zo-npg", risk_factor=0.5)
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="example2", init_policy="file")
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="example2", unknown=1)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        resolve_config(ExperimentConfig(preset="example3"))


def test_random_initial_policy_is_stable_and_on_sphere(example2):
    oracle = optimal_policy(solve_team(example2))
    for seed in range(5):
        p = random_stable_policy(example2, oracle, 0.3, seed)
        evaluate(example2, p)
        assert p.distance(oracle) == pytest.approx(0.3 * np.sqrt(2))
    assert random_stable_policy(example2, oracle, 0.3, 1).distance(
        random_stable_policy(example2, oracle, 0.3, 1)) == 0.0


def test_initial_policy_from_file(tmp_path, example2):
    oracle = optimal_policy(solve_team(example2))
    path = dump_policy(oracle, tmp_path / "start.yaml")
    _, cfg = resolve_config(ExperimentConfig(preset="example2", init_policy="file", policy_file=str(path)))
    assert initial_policy(example2, cfg, None, 0).distance(oracle) == 0.0


def test_riccati_mode_writes_oracle_gains(tmp_path):
    result = run_experiment(ExperimentConfig(preset="example2", mode="riccati", out=str(tmp_path)))
    assert result.exit_code == 0
    assert result.oracle.theta_bar[0, 0] == pytest.approx(-0.6180339887)
    rows = _read_csv(tmp_path / "oracle_gains.csv")
    assert rows[0] == ["block", "row", "col", "value"]
    values = {row[0]: float(row[3]) for row in rows[1:]}
    assert values["theta[0]"] == pytest.approx(-0.5)
    assert values["theta_bar"] == pytest.approx(-0.6180339887)
    summary = (tmp_path / "summary.txt").read_text()
    assert "riccati" in summary and "wall time" in summary


def test_pg_mode_trace_has_decreasing_gap(tmp_path):
    """Model-based PG on example1 (lambda = 0.1) writes a trace whose gap never increases."""
    result = run_experiment(ExperimentConfig(preset="example1", iters=50, init_policy="random",
                                             out=str(tmp_path)))
    assert result.exit_code == 0
    rows = _read_csv(tmp_path / "trace_0.csv")
    assert rows[0] == ["iter", "J", "gap", "grad_norm", "gain_err"]
    gaps = [float(row[2]) for row in rows[1:]]
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < gaps[0]
    outcome = result.outcomes[0]
    assert outcome.gain_error < outcome.initial_gain_error


def test_zeroth_order_mode_writes_one_trace_per_seed(tmp_path):
    result = run_experiment(ExperimentConfig(preset="example2", iters=2, samples_L=10, seeds_count=3,
                                             seed=5, out=str(tmp_path)))
    assert [o.seed for o in result.outcomes] == [5, 6, 7]
    for seed in (5, 6, 7):
        rows = _read_csv(tmp_path / f"trace_{seed}.csv")
        assert rows[0] == ["iter", "J", "gap", "grad_norm", "gain_err", "rejected_samples", "estimate_stderr"]
        assert len(rows) == 4
    assert (tmp_path / "oracle_gains.csv").exists()


def test_simulate_mode_exports_trajectories(tmp_path):
    result = run_experiment(ExperimentConfig(preset="example2", mode="simulate", rollout_T=4, seeds_count=2,
                                             export_trajectory=True, out=str(tmp_path)))
    assert len(result.outcomes) == 2
    assert "estimated average cost" in result.message
    rows = _read_csv(tmp_path / "trajectory_0.csv")
    assert rows[0][:3] == ["t", "sub", "agent"]
    assert len(rows) == 1 + 4 * 10


def test_unstable_iterate_sets_exit_code(tmp_path):
    """A halted run is reported with exit code 3 and still leaves its artifacts."""
    result = run_experiment(ExperimentConfig(preset="example2", mode="pg", eta=1e4, iters=5,
                                             backtracking=False, out=str(tmp_path)))
    assert result.exit_code == 3
    assert result.outcomes[0].halted_reason.startswith("UnstableIterate")
    assert (tmp_path / "trace_0.csv").exists()
    assert (tmp_path / "summary.txt").exists()


def test_model_file_experiment(tmp_path, example2):
    path = write_model(example2, tmp_path / "model.yaml")
    result = run_experiment(ExperimentConfig(model_path=str(path), mode="npg", eta=0.1, iters=100,
                                             init_policy=InitPolicy.RANDOM))
    assert result.outcomes[0].gain_error < 1e-4
    assert result.artifacts == []


@pytest.mark.slow
def test_example2_model_free_convergence():
    """The example2 preset brings the gain error below 25% of its start for at least 9 of 10 seeds."""
    result = run_experiment(ExperimentConfig(preset="example2"))
    assert len(result.outcomes) == 10
    good = [o for o in result.outcomes if o.gain_error < 0.25 * o.initial_gain_error]
    assert len(good) >= 9


def test_odd_antithetic_sample_count_is_a_config_error():
    with pytest.raises(ConfigError) as excinfo:
        resolve_config(ExperimentConfig(preset="example2", samples_L=7))
    assert excinfo.value.field == "samples_L"
    _, cfg = resolve_config(ExperimentConfig(preset="example2", samples_L=7, antithetic=False))
    assert cfg.samples_L == 7
