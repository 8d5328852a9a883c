"""
Command-line entry point.

    python -m deepteam.main --preset example2 --mode riccati
    python -m deepteam.main --preset example1 --mode npg --out runs/ex1
    python -m deepteam.main --model team.yaml --mode zo-pg --lambda 0 --seeds-count 10 --out runs/zo

Exit codes: 0 success, 2 configuration or model error, 3 numerical failure.
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from . import settings
from .errors import ConfigError, DeepTeamError
from .models import ExperimentConfig, InitMode, InitPolicy, Mode
from .pipeline import format_summary, run_experiment
from .presets import preset_names

logger = logging.getLogger(__name__)


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepteam",
        description="Riccati solutions, policy gradients and model-free learning for deep structured LQ teams",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=preset_names(), help="Built-in model and experiment defaults")
    source.add_argument("--model", dest="model_path", metavar="PATH", help="YAML model file")

    parser.add_argument("--mode", choices=[m.value for m in Mode])
    parser.add_argument("--eta", type=float, help="Step size")
    parser.add_argument("--iters", type=int, help="Number of updates")
    parser.add_argument("--tol", type=float, default=1e-10, help="Gradient-norm stopping tolerance (pg/npg)")
    parser.add_argument("--samples-L", dest="samples_L", type=int, help="Perturbation samples per gradient estimate")
    parser.add_argument("--rollout-T", dest="rollout_T", type=int, help="Rollout horizon")
    parser.add_argument("--radius-r", dest="radius_r", type=float, help="Smoothing sphere radius")
    parser.add_argument("--lambda", dest="risk_factor", type=float, help="Risk factor (overrides the model)")
    parser.add_argument("--seed", type=int, default=0, help="Master seed; runs use seed, seed+1, ...")
    parser.add_argument("--seeds-count", dest="seeds_count", type=int, help="Number of seeded runs")
    parser.add_argument("--out", metavar="DIR", help="Artifact directory")
    parser.add_argument("--init-policy", dest="init_policy", choices=[p.value for p in InitPolicy])
    parser.add_argument("--init-radius", dest="init_radius", type=float,
                        help="Distance of random initial policies from the optimal gains")
    parser.add_argument("--policy-file", dest="policy_file", metavar="PATH", help="YAML policy (theta, theta_bar)")
    parser.add_argument("--init-mode", dest="init_mode", choices=[m.value for m in InitMode],
                        help="Initial-state distribution of simulated agents")
    parser.add_argument("--backtracking", type=_on_off, metavar="{on,off}")
    parser.add_argument("--antithetic", type=_on_off, metavar="{on,off}")
    parser.add_argument("--export-trajectory", dest="export_trajectory", action="store_true",
                        help="Also write one per-agent trajectory CSV per seed")
    parser.add_argument("--log-level", dest="log_level", help="Overrides DEEPTEAM_LOG_LEVEL")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    fields = {
        name: value for name, value in vars(args).items()
        if name in ExperimentConfig.model_fields and value is not None
    }
    try:
        return ExperimentConfig(**fields)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(first["msg"], field=field) from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level_name = (args.log_level or settings.log_level()).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        result = run_experiment(cfg)
    except DeepTeamError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code

    print(format_summary(result), end="")
    if result.artifacts:
        print(f"artifacts written to {args.out}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
