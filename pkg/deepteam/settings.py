"""
Environment-driven settings.

All knobs are optional; defaults suit desk-scale experiments.
"""
import os

DEFAULT_MAX_ITERATIONS = 100_000
DEFAULT_ROLLOUT_CHUNK = 512


def _int_from_env(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return value if value > 0 else default


def log_level() -> str:
    """Log level name from DEEPTEAM_LOG_LEVEL (default WARNING)."""
    return os.getenv("DEEPTEAM_LOG_LEVEL", "WARNING").upper()


def max_iterations() -> int:
    """Cap for Riccati and policy-evaluation fixed points (DEEPTEAM_RICCATI_MAX_ITERS)."""
    return _int_from_env("DEEPTEAM_RICCATI_MAX_ITERS", DEFAULT_MAX_ITERATIONS)


def rollout_chunk() -> int:
    """How many rollouts are simulated per vectorised batch (DEEPTEAM_ROLLOUT_CHUNK)."""
    return _int_from_env("DEEPTEAM_ROLLOUT_CHUNK", DEFAULT_ROLLOUT_CHUNK)
